#pragma once

// Scale-corrected PSNR / SSIM evaluation with a copy-source baseline.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pixl/dataset.hpp"
#include "pixl/imgcore.hpp"
#include "pixl/model.hpp"
#include "pixl/parallel.hpp"

namespace pixl {

struct ScaleCorrected {
  FloatBuffer image;
  std::vector<double> alpha;  // one per channel
};

/// Per-channel least-squares gain toward the target, then clip to [0,1].
/// A zero-energy channel keeps α = 1.
inline ScaleCorrected scale_correct(const FloatBuffer& pred, const FloatBuffer& target) {
  require(pred.same_dims(target), "scale_correct: prediction " + pred.dims() + " vs target " + target.dims());
  ScaleCorrected out{FloatBuffer(pred.channels(), pred.height(), pred.width()), {}};
  for (int c = 0; c < pred.channels(); ++c) {
    const auto p = pred.plane(c), t = target.plane(c);
    double pt = 0, pp = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      pt += double(p[i]) * t[i];
      pp += double(p[i]) * p[i];
    }
    const double a = pp > 0 ? pt / pp : 1.0;
    out.alpha.push_back(a);
    auto o = out.image.plane(c);
    for (size_t i = 0; i < p.size(); ++i) o[i] = float(std::clamp(a * p[i], 0.0, 1.0));
  }
  return out;
}

inline double mse(const FloatBuffer& a, const FloatBuffer& b) {
  require(a.same_dims(b), "mse: " + a.dims() + " vs " + b.dims());
  require(!a.empty(), "mse: empty images");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  return acc / double(a.size());
}

/// 10·log10(1/MSE) for images in [0,1]; +inf when identical.
inline double psnr(const FloatBuffer& a, const FloatBuffer& b) {
  const double m = mse(a, b);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01, kSsimK2 = 0.03;

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double total = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    k[size_t(i)] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma));
    total += k[size_t(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

/// Mean SSIM over channels and every position where the 11×11 Gaussian
/// window fits inside the image (data range 1).
inline double ssim(const FloatBuffer& a, const FloatBuffer& b) {
  require(a.same_dims(b), "ssim: " + a.dims() + " vs " + b.dims());
  const int h = a.height(), w = a.width(), r = kSsimWindow / 2;
  require(h >= kSsimWindow && w >= kSsimWindow, "ssim: images smaller than the 11x11 window");
  const auto k = ssim_kernel();
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const int oh = h - 2 * r, ow = w - 2 * r;
  // Separable filtering of x, y, x², y², xy: rows first, then columns.
  std::vector<std::array<double, 5>> rows(size_t(h) * ow);
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.plane(c), pb = b.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> s{};
        for (int j = 0; j < kSsimWindow; ++j) {
          const size_t i = size_t(y) * w + x + j;
          const double va = pa[i], vb = pb[i], kj = k[size_t(j)];
          s[0] += kj * va;
          s[1] += kj * vb;
          s[2] += kj * va * va;
          s[3] += kj * vb * vb;
          s[4] += kj * va * vb;
        }
        rows[size_t(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> s{};
        for (int j = 0; j < kSsimWindow; ++j) {
          const auto& v = rows[size_t(y + j) * ow + x];
          for (int q = 0; q < 5; ++q) s[size_t(q)] += k[size_t(j)] * v[size_t(q)];
        }
        const double mu_a = s[0], mu_b = s[1];
        const double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
  }
  return total / (double(a.channels()) * oh * ow);
}

// ---------------------------------------------------------------------------
// Evaluation

struct PairMetrics {
  std::string scene;
  int source = 0, target = 0;
  double psnr = 0, ssim = 0;
  std::array<double, 3> alpha{};
  double copy_psnr = 0, copy_ssim = 0;
};

struct EvalReport {
  std::vector<PairMetrics> pairs;
  double mean_psnr = 0, mean_ssim = 0;
  double copy_mean_psnr = 0, copy_mean_ssim = 0;
  double forward_seconds = 0;  // one image, mean of timed runs after warm-ups

  void write_csv(const std::string& path) const;
  std::string summary(const std::string& method = "pixl") const;
};

struct EvalOptions {
  int warmups = 2;
  int timed_runs = 5;
  int max_pairs = -1;  // all ordered pairs
};

/// Times the forward pass of one (source, conditioning) input.
inline double time_forward(const PixlModel& model, const FloatBuffer& src, const ConditioningStack& cond,
                           int warmups, int runs) {
  for (int i = 0; i < warmups; ++i) (void)model.relight(src, cond);
  double total = 0;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.relight(src, cond);
    total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return runs > 0 ? total / runs : 0.0;
}

/// Every ordered (source, target) pair of distinct conditions in each scene,
/// with unaugmented target conditioning. The copy-source baseline is scored
/// on the same pairs with the same correction.
inline EvalReport evaluate(const PixlModel& model, const Dataset& ds, const EvalOptions& opt = {}) {
  struct Job {
    size_t scene;
    int source, target;
  };
  std::vector<Job> jobs;
  for (size_t s = 0; s < ds.scenes.size(); ++s) {
    const int k = int(ds.scenes[s].conditions.size());
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b) jobs.push_back({s, a, b});
  }
  if (opt.max_pairs >= 0 && jobs.size() > size_t(opt.max_pairs)) jobs.resize(size_t(opt.max_pairs));
  require(!jobs.empty(), "evaluate: empty split");
  EvalReport rep;
  rep.pairs.resize(jobs.size());
  parallel_for(jobs.size(), [&](size_t i) {
    const auto& j = jobs[i];
    const auto& scene = ds.scenes[j.scene];
    const auto& src = scene.conditions[size_t(j.source)].image;
    const auto& tgt = scene.conditions[size_t(j.target)];
    const auto pred = scale_correct(model.relight(src, tgt.cond), tgt.image);
    const auto copy = scale_correct(src, tgt.image);
    auto& m = rep.pairs[i];
    m.scene = scene.id;
    m.source = j.source;
    m.target = j.target;
    m.psnr = psnr(pred.image, tgt.image);
    m.ssim = ssim(pred.image, tgt.image);
    for (size_t c = 0; c < 3; ++c) m.alpha[c] = pred.alpha[c];
    m.copy_psnr = psnr(copy.image, tgt.image);
    m.copy_ssim = ssim(copy.image, tgt.image);
  });
  for (const auto& m : rep.pairs) {
    rep.mean_psnr += m.psnr;
    rep.mean_ssim += m.ssim;
    rep.copy_mean_psnr += m.copy_psnr;
    rep.copy_mean_ssim += m.copy_ssim;
  }
  const double n = double(rep.pairs.size());
  rep.mean_psnr /= n;
  rep.mean_ssim /= n;
  rep.copy_mean_psnr /= n;
  rep.copy_mean_ssim /= n;
  const auto& first = ds.scenes[jobs[0].scene];
  rep.forward_seconds = time_forward(model, first.conditions[size_t(jobs[0].source)].image,
                                     first.conditions[size_t(jobs[0].target)].cond, opt.warmups, opt.timed_runs);
  return rep;
}

namespace detail {
inline std::string fmt_num(double v, int precision = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}
}  // namespace detail

// The lpips column is kept for schema compatibility and always left empty.
inline void EvalReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  require(bool(os), "cannot write " + path);
  os << "scene,source,target,psnr,ssim,lpips,alpha_r,alpha_g,alpha_b,copy_psnr,copy_ssim\n";
  for (const auto& m : pairs) {
    os << m.scene << "," << m.source << "," << m.target << "," << detail::fmt_num(m.psnr, 9) << ","
       << detail::fmt_num(m.ssim, 9) << ",";
    for (double a : m.alpha) os << "," << detail::fmt_num(a, 9);
    os << "," << detail::fmt_num(m.copy_psnr, 9) << "," << detail::fmt_num(m.copy_ssim, 9) << "\n";
  }
  require(bool(os), "failed writing " + path);
}

inline std::string EvalReport::summary(const std::string& method) const {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-14s %9s %8s %8s %10s\n", "method", "PSNR", "SSIM", "LPIPS", "time (s)");
  out += line;
  auto row = [&](const std::string& name, double p, double s, const std::string& t) {
    std::snprintf(line, sizeof line, "%-14s %9s %8s %8s %10s\n", name.c_str(), detail::fmt_num(p, 4).c_str(),
                  detail::fmt_num(s, 3).c_str(), "-", t.c_str());
    out += line;
  };
  row("copy-source", copy_mean_psnr, copy_mean_ssim, "-");
  row(method, mean_psnr, mean_ssim, detail::fmt_num(forward_seconds, 3));
  std::snprintf(line, sizeof line, "%zu pairs\n", pairs.size());
  out += line;
  return out;
}

}  // namespace pixl
