#pragma once

// Central finite-difference oracle for the autodiff engine, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pixl/ad/ops.hpp"
#include "pixl/model.hpp"

namespace gradcheck {

using pixl::ad::Tensor;

inline Tensor random_tensor(std::mt19937_64& g, pixl::ad::Shape shape, float lo = -1.f, float hi = 1.f,
                            bool requires_grad = true) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(pixl::ad::numel(shape));
  for (float& x : v) x = u(g);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct Result {
  std::string name;
  double rel_err = 0;  // worst over the checked tensors
};

// The scalar under test is L = Σ w_i·y_i with fixed random weights, reduced in
// double. The autodiff side differentiates the same expression.
class Projection {
 public:
  Projection(const Tensor& y, uint64_t seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<float> n(0.f, 1.f);
    w_.resize(y.numel());
    for (float& x : w_) x = n(g);
    shape_ = y.shape();
  }
  double value(const Tensor& y) const {
    double acc = 0;
    for (size_t i = 0; i < w_.size(); ++i) acc += double(w_[i]) * y.data()[i];
    return acc;
  }
  Tensor loss(const Tensor& y) const {
    return pixl::ad::sum(pixl::ad::mul(y, Tensor::from(shape_, w_)));
  }

 private:
  std::vector<float> w_;
  pixl::ad::Shape shape_;
};

/// Compares autodiff gradients of every tensor in `wrt` against central
/// differences with step h. At most `max_entries` entries per tensor are
/// probed (all of them when 0). The error per tensor is
/// ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor) over the probed entries.
inline double check(const std::function<Tensor()>& f, std::vector<Tensor> wrt, double h = 1e-3,
                    size_t max_entries = 0, uint64_t seed = 7, double floor = 1e-2,
                    std::vector<double>* per_tensor = nullptr, bool fourth_order = false) {
  for (auto& t : wrt) t.zero_grad();
  Tensor y = f();
  Projection proj(y, seed);
  pixl::ad::backward(proj.loss(y));
  std::mt19937_64 g(seed + 1);
  double worst = 0;
  for (auto& t : wrt) {
    std::vector<size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), size_t(0));
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), g);
      idx.resize(max_entries);
    }
    double num = 0, n_ad = 0, n_fd = 0;
    for (size_t i : idx) {
      const pixl::ad::real orig = t.data()[i];
      double fd;
      {
        pixl::ad::NoGrad ng;
        t.data()[i] = pixl::ad::real(orig + h);
        const double lp = proj.value(f());
        t.data()[i] = pixl::ad::real(orig - h);
        const double lm = proj.value(f());
        // Divide by the step actually taken after float rounding.
        fd = (lp - lm) / (double(pixl::ad::real(orig + h)) - double(pixl::ad::real(orig - h)));
        if (fourth_order) {
          t.data()[i] = pixl::ad::real(orig + 2 * h);
          const double lp2 = proj.value(f());
          t.data()[i] = pixl::ad::real(orig - 2 * h);
          const double lm2 = proj.value(f());
          fd = (8 * (lp - lm) - (lp2 - lm2)) / (12 * h);
        }
        t.data()[i] = orig;
      }
      const double ad = t.has_grad() ? t.grad()[i] : 0.0;
      num += (ad - fd) * (ad - fd);
      n_ad += ad * ad;
      n_fd += fd * fd;
    }
    const double denom = std::max({std::sqrt(n_ad), std::sqrt(n_fd), floor});
    worst = std::max(worst, std::sqrt(num) / denom);
    if (per_tensor) per_tensor->push_back(std::sqrt(num) / denom);
  }
  return worst;
}

/// One case per differentiable op family, each on five random shapes.
inline std::vector<Result> op_suite(uint64_t seed = 42) {
  namespace ad = pixl::ad;
  std::mt19937_64 g(seed);
  std::vector<Result> out;
  auto rnd = [&](ad::Shape s, float lo = -1.f, float hi = 1.f) { return random_tensor(g, std::move(s), lo, hi); };
  auto dim = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); };
  auto run = [&](const std::string& name, const std::function<double()>& body) {
    double worst = 0;
    for (int rep = 0; rep < 5; ++rep) worst = std::max(worst, body());
    out.push_back({name, worst});
  };

  run("add_broadcast", [&] {
    auto a = rnd({dim(1, 3), dim(2, 4), dim(2, 5)});
    auto b = rnd({1, a.dim(2)});
    auto c = rnd({a.dim(0), 1, 1});
    return check([&] { return ad::add(ad::add(a, b), c); }, {a, b, c});
  });
  run("sub_broadcast", [&] {
    auto a = rnd({dim(2, 4), 1, dim(2, 5)});
    auto b = rnd({dim(2, 3), 1});
    return check([&] { return ad::sub(a, b); }, {a, b});
  });
  run("mul_broadcast", [&] {
    auto a = rnd({dim(2, 4), dim(2, 4), dim(2, 4)});
    auto b = rnd({a.dim(1), 1});
    return check([&] { return ad::mul(a, b); }, {a, b});
  });
  run("scale_add_scalar", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)});
    return check([&] { return ad::add_scalar(ad::scale(a, 1.7f), -0.3f); }, {a});
  });
  run("relu", [&] {
    // Keep inputs away from the kink at 0.
    auto a = rnd({dim(2, 6), dim(2, 6)}, 0.1f, 1.f);
    for (size_t i = 0; i < a.numel(); i += 2) a.data()[i] = -a.data()[i];
    return check([&] { return ad::relu(a); }, {a});
  });
  run("gelu", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)}, -3.f, 3.f);
    return check([&] { return ad::gelu(a); }, {a});
  });
  run("sigmoid", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)}, -3.f, 3.f);
    return check([&] { return ad::sigmoid(a); }, {a});
  });
  run("abs", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)}, 0.1f, 1.f);
    for (size_t i = 0; i < a.numel(); i += 3) a.data()[i] = -a.data()[i];
    return check([&] { return ad::abs(a); }, {a});
  });
  run("clip", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)}, -0.5f, 1.5f);
    for (auto& v : a.data())
      if (std::abs(v) < 0.01f || std::abs(v - 1.f) < 0.01f) v += 0.05f;
    return check([&] { return ad::clip(a, 0.f, 1.f); }, {a});
  });
  run("sum_mean", [&] {
    auto a = rnd({dim(2, 6), dim(2, 6)});
    return check([&] { return ad::add(ad::sum(a), ad::scale(ad::mean(a), 3.f)); }, {a});
  });
  run("reshape_permute_transpose", [&] {
    auto a = rnd({dim(2, 3), dim(2, 4), dim(2, 3), dim(1, 3)});
    return check(
        [&] { return ad::transpose(ad::reshape(ad::permute(a, {2, 0, 3, 1}), {a.dim(2), -1, a.dim(1)}), 0, 2); },
        {a});
  });
  run("concat_slice", [&] {
    const int n = dim(2, 4);
    auto a = rnd({n, dim(1, 3), 3});
    auto b = rnd({n, dim(1, 3), 3});
    return check([&] { return ad::slice(ad::concat({a, b}, 1), 1, 1, a.dim(1) + b.dim(1)); }, {a, b});
  });
  run("broadcast_to", [&] {
    auto a = rnd({1, dim(2, 4), 1});
    const ad::Shape to{3, a.dim(1), dim(2, 3)};
    return check([&] { return ad::broadcast_to(a, to); }, {a});
  });
  run("matmul", [&] {
    auto a = rnd({dim(1, 3), dim(2, 5), dim(2, 6)});
    auto b = rnd({a.dim(2), dim(2, 5)});
    return check([&] { return ad::matmul(a, b); }, {a, b});
  });
  run("matmul_batched", [&] {
    auto a = rnd({dim(1, 3), dim(2, 5), dim(2, 6)});
    auto b = rnd({a.dim(0), a.dim(2), dim(2, 5)});
    return check([&] { return ad::matmul(a, b); }, {a, b});
  });
  run("linear", [&] {
    auto x = rnd({dim(1, 3), dim(2, 5), dim(2, 6)});
    auto w = rnd({x.dim(2), dim(2, 5)});
    auto b = rnd({w.dim(1)});
    return check([&] { return ad::linear(x, w, b); }, {x, w, b});
  });
  run("conv2d_dense", [&] {
    const int c = dim(1, 3), o = dim(1, 4), k = 2 * dim(0, 1) + 1;
    auto x = rnd({dim(1, 2), c, dim(k, 7), dim(k, 7)});
    auto w = rnd({o, c, k, k});
    auto b = rnd({o});
    const ad::Conv2dOptions opt{.stride = dim(1, 2), .pad = k / 2,
                                .pad_mode = dim(0, 1) ? ad::PadMode::replicate : ad::PadMode::zeros};
    return check([&] { return ad::conv2d(x, w, b, opt); }, {x, w, b});
  });
  run("conv2d_pointwise", [&] {
    auto x = rnd({dim(1, 2), dim(1, 4), dim(2, 6), dim(2, 6)});
    auto w = rnd({dim(1, 4), x.dim(1), 1, 1});
    return check([&] { return ad::conv2d(x, w, {}); }, {x, w});
  });
  run("conv2d_patchify", [&] {
    const int p = 2 * dim(1, 2);
    auto x = rnd({dim(1, 2), 3, p * dim(1, 3), p * dim(1, 3)});
    auto w = rnd({dim(2, 4), 3, p, p});
    auto b = rnd({w.dim(0)});
    return check([&] { return ad::conv2d(x, w, b, {.stride = p}); }, {x, w, b});
  });
  run("conv2d_depthwise", [&] {
    const int c = dim(1, 4), k = 2 * dim(1, 3) + 1;
    auto x = rnd({dim(1, 2), c, dim(3, 9), dim(3, 9)});
    auto w = rnd({c, 1, k, k});
    auto b = rnd({c});
    const ad::Conv2dOptions opt{.stride = dim(1, 2), .pad = k / 2,
                                .pad_mode = dim(0, 1) ? ad::PadMode::replicate : ad::PadMode::zeros, .groups = c};
    return check([&] { return ad::conv2d(x, w, b, opt); }, {x, w, b});
  });
  run("upsample_bilinear", [&] {
    auto x = rnd({dim(1, 2), dim(1, 3), dim(1, 5), dim(1, 5)});
    const int oh = dim(1, 10), ow = dim(1, 10);
    return check([&] { return ad::upsample_bilinear(x, oh, ow); }, {x});
  });
  run("layer_norm", [&] {
    auto x = rnd({dim(1, 4), dim(4, 12)}, -2.f, 2.f);
    auto gm = rnd({x.dim(1)}, 0.5f, 1.5f);
    auto bt = rnd({x.dim(1)});
    return check([&] { return ad::layer_norm(x, gm, bt); }, {x, gm, bt});
  });
  run("softmax", [&] {
    auto x = rnd({dim(1, 4), dim(2, 8)}, -2.f, 2.f);
    return check([&] { return ad::softmax(x); }, {x});
  });
  run("attention", [&] {
    const ad::Shape s{dim(1, 2), dim(1, 3), dim(2, 6), 4 * dim(1, 2)};
    auto q = rnd(s), k = rnd(s), v = rnd(s);
    return check([&] { return ad::scaled_dot_product_attention(q, k, v); }, {q, k, v});
  });
  run("rope2d", [&] {
    const int gh = dim(1, 3), gw = dim(1, 3), prefix = dim(0, 2);
    auto x = rnd({dim(1, 2), dim(1, 2), prefix + gh * gw, 4 * dim(1, 2)});
    std::vector<double> rows, cols;
    for (int y = 0; y < gh; ++y)
      for (int c = 0; c < gw; ++c) {
        rows.push_back(y);
        cols.push_back(c);
      }
    return check([&] { return ad::rope2d(x, prefix, rows, cols, 100.0); }, {x});
  });
  return out;
}

/// The micro configuration used for the end-to-end model gradient check.
inline pixl::ModelConfig micro_config() {
  pixl::ModelConfig c;
  c.d = 16;
  c.L = 2;
  c.heads = 2;
  c.p = 4;
  c.n_registers = 2;
  c.readout_indices = {0, 0, 1, 1};
  c.source_encoder_depth = 1;
  c.intrinsics_encoder_depth = 1;
  c.intrinsics_width = 4;
  c.dpt_features = 8;
  c.mlp_ratio = 2;
  return c;
}

/// Full forward/backward check of the micro model on 8×8 inputs. The
/// zero-initialized output layer is replaced by small random weights so that
/// every parameter receives a gradient, and inputs are kept inside (0.2, 0.8)
/// so the output clip stays inactive. Returns the worst per-tensor error over
/// all parameters and both inputs.
inline double model_check(const pixl::ModelConfig& cfg, uint64_t seed = 5, size_t max_entries = 6,
                          std::vector<double>* per_tensor = nullptr, bool fourth_order = false, double h = 1e-3) {
  pixl::PixlModel model(cfg, seed);
  std::mt19937_64 g(seed);
  for (auto& p : model.params().params())
    if (p.name.starts_with("head.out")) {
      std::uniform_real_distribution<float> u(-0.05f, 0.05f);
      for (auto& v : p.tensor.data()) v = u(g);
    }
  auto src = random_tensor(g, {1, 3, 8, 8}, 0.2f, 0.8f);
  auto cond = random_tensor(g, {1, 9, 8, 8}, 0.f, 1.f);
  std::vector<Tensor> wrt{src, cond};
  for (auto& p : model.params().params()) wrt.push_back(p.tensor);
  return check([&] { return model.forward(src, cond); }, wrt, h, max_entries, seed, 1e-2, per_tensor,
               fourth_order);
}

}  // namespace gradcheck
