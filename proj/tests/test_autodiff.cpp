#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "pixl/ad/checkpoint.hpp"
#include "pixl/ad/ops.hpp"
#include "pixl/ad/optim.hpp"

namespace ad = pixl::ad;
using ad::Tensor;

namespace {

std::vector<float> iota_values(size_t n, float start = 0.f, float step = 1.f) {
  std::vector<float> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = start + step * float(i);
  return v;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("pixl_ad_" + name)).string();
}

}  // namespace

TEST(Ops, MatmulIdentity) {
  std::vector<float> eye(16, 0.f);
  for (int i = 0; i < 4; ++i) eye[size_t(i) * 5] = 1.f;
  auto x = Tensor::from({4, 3}, iota_values(12, -2.f, 0.37f));
  auto y = ad::matmul(Tensor::from({4, 4}, eye), x);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 g(1);
  auto x = gradcheck::random_tensor(g, {7, 13}, -20.f, 20.f, false);
  auto y = ad::softmax(x);
  for (int r = 0; r < 7; ++r) {
    double s = 0;
    for (int c = 0; c < 13; ++c) s += y.data()[size_t(r) * 13 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, ConvOfConstantWithNormalizedKernelIsConstant) {
  auto x = Tensor::full({1, 2, 9, 11}, 0.625f);
  std::vector<float> k(2 * 2 * 3 * 3, 1.f / 18.f);
  for (auto mode : {ad::PadMode::replicate}) {
    auto y = ad::conv2d(x, Tensor::from({2, 2, 3, 3}, k), {}, {.pad = 1, .pad_mode = mode});
    for (float v : y.data()) EXPECT_NEAR(v, 0.625f, 1e-6);
  }
  std::vector<float> dk(3 * 49, 1.f / 49.f);
  auto xd = Tensor::full({2, 3, 8, 8}, 0.25f);
  auto yd = ad::conv2d(xd, Tensor::from({3, 1, 7, 7}, dk), {},
                       {.pad = 3, .pad_mode = ad::PadMode::replicate, .groups = 3});
  for (float v : yd.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
  // Zero padding darkens the border instead.
  auto yz = ad::conv2d(xd, Tensor::from({3, 1, 7, 7}, dk), {}, {.pad = 3, .groups = 3});
  EXPECT_LT(yz.data()[0], 0.2f);
}

// Direct 7-loop convolution as an oracle for the im2col/depthwise kernels.
TEST(Ops, Conv2dMatchesDirectLoops) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 12; ++trial) {
    const bool dw = trial % 3 == 2;
    const int c = 3, o = dw ? 3 : 4, k = trial % 2 ? 3 : 5, stride = 1 + trial % 2, pad = (trial / 2) % 3;
    const auto mode = trial % 4 < 2 ? ad::PadMode::zeros : ad::PadMode::replicate;
    auto x = gradcheck::random_tensor(g, {2, c, 9, 8}, -1, 1, false);
    auto w = gradcheck::random_tensor(g, {o, dw ? 1 : c, k, k}, -1, 1, false);
    auto b = gradcheck::random_tensor(g, {o}, -1, 1, false);
    const ad::Conv2dOptions opt{.stride = stride, .pad = pad, .pad_mode = mode, .groups = dw ? c : 1};
    auto y = ad::conv2d(x, w, b, opt);
    const int ho = (9 + 2 * pad - k) / stride + 1, wo = (8 + 2 * pad - k) / stride + 1;
    ASSERT_EQ(y.shape(), (ad::Shape{2, o, ho, wo}));
    for (int n = 0; n < 2; ++n)
      for (int oc = 0; oc < o; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double acc = b.data()[size_t(oc)];
            for (int ic = 0; ic < (dw ? 1 : c); ++ic)
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                  int iy = oy * stride + i - pad, ix = ox * stride + j - pad;
                  if (mode == ad::PadMode::replicate) {
                    iy = std::clamp(iy, 0, 8);
                    ix = std::clamp(ix, 0, 7);
                  } else if (iy < 0 || iy > 8 || ix < 0 || ix > 7) {
                    continue;
                  }
                  const int ch = dw ? oc : ic;
                  acc += double(w.data()[((size_t(oc) * (dw ? 1 : c) + ic) * k + i) * k + j]) *
                         x.data()[((size_t(n) * c + ch) * 9 + iy) * 8 + ix];
                }
            EXPECT_NEAR(y.data()[((size_t(n) * o + oc) * ho + oy) * wo + ox], acc, 1e-5) << "trial " << trial;
          }
  }
}

TEST(Ops, UpsampleConstantStaysConstant) {
  auto y = ad::upsample_bilinear(Tensor::full({1, 2, 3, 5}, 0.3f), 12, 7);
  for (float v : y.data()) EXPECT_EQ(v, 0.3f);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 5});
  try {
    ad::add(a, b);
    FAIL() << "expected an error";
  } catch (const pixl::Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::matmul(a, b), pixl::Error);
  EXPECT_THROW(ad::concat({a, b}, 0), pixl::Error);
}

TEST(Backward, SumGivesOnes) {
  auto w = Tensor::from({3, 4}, iota_values(12), true);
  ad::backward(ad::sum(w));
  for (float g : w.grad()) EXPECT_EQ(g, 1.f);
}

TEST(Backward, SquareAtThreeGivesSix) {
  auto w = Tensor::full({5}, 3.f, true);
  ad::backward(ad::sum(ad::mul(w, w)));
  for (float g : w.grad()) EXPECT_EQ(g, 6.f);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto w = Tensor::full({2, 2}, 3.f, true);
  auto loss = ad::sum(ad::mul(w, w));
  ad::backward(loss);
  ad::backward(loss);
  for (float g : w.grad()) EXPECT_EQ(g, 12.f);
  w.zero_grad();
  ad::backward(loss);
  for (float g : w.grad()) EXPECT_EQ(g, 6.f);
}

TEST(Backward, NonScalarIsAnError) {
  auto w = Tensor::zeros({3}, true);
  EXPECT_THROW(ad::backward(ad::scale(w, 2.f)), pixl::Error);
}

TEST(Backward, NoGradRecordsNothing) {
  auto w = Tensor::zeros({3}, true);
  ad::NoGrad ng;
  auto y = ad::scale(w, 2.f);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, BroadcastMatchesExplicitTiling) {
  std::mt19937_64 g(9);
  auto a = gradcheck::random_tensor(g, {3, 4, 5});
  auto b = gradcheck::random_tensor(g, {4, 1});
  auto w = gradcheck::random_tensor(g, {3, 4, 5}, -1, 1, false);
  ad::backward(ad::sum(ad::mul(ad::mul(a, b), w)));
  // Tiled copy of b, differentiated separately and summed back by hand.
  std::vector<float> tiled(60);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 5; ++k) tiled[size_t(i * 20 + j * 5 + k)] = b.data()[size_t(j)];
  auto bt = Tensor::from({3, 4, 5}, tiled, true);
  auto a2 = Tensor::from({3, 4, 5}, a.values(), true);
  ad::backward(ad::sum(ad::mul(ad::mul(a2, bt), w)));
  for (int j = 0; j < 4; ++j) {
    double expect = 0;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 5; ++k) expect += bt.grad()[size_t(i * 20 + j * 5 + k)];
    EXPECT_NEAR(b.grad()[size_t(j)], expect, 1e-5);
  }
  for (size_t i = 0; i < 60; ++i) EXPECT_NEAR(a.grad()[i], a2.grad()[i], 1e-6);
}

TEST(GradCheck, RandomThreeLayerMlp) {
  std::mt19937_64 g(11);
  auto x = gradcheck::random_tensor(g, {4, 6});
  auto w1 = gradcheck::random_tensor(g, {6, 8}), b1 = gradcheck::random_tensor(g, {8});
  auto w2 = gradcheck::random_tensor(g, {8, 8}), b2 = gradcheck::random_tensor(g, {8});
  auto w3 = gradcheck::random_tensor(g, {8, 3}), b3 = gradcheck::random_tensor(g, {3});
  auto f = [&] {
    auto h = ad::gelu(ad::linear(x, w1, b1));
    h = ad::gelu(ad::linear(h, w2, b2));
    return ad::linear(h, w3, b3);
  };
  EXPECT_LT(gradcheck::check(f, {x, w1, b1, w2, b2, w3, b3}), 1e-3);
}

TEST(GradCheck, EveryOpOnFiveShapes) {
  for (const auto& r : gradcheck::op_suite()) EXPECT_LT(r.rel_err, 1e-3) << r.name;
}

TEST(Rope, ZeroPositionIsIdentity) {
  std::mt19937_64 g(2);
  auto x = gradcheck::random_tensor(g, {1, 2, 3, 8}, -1, 1, false);
  auto y = ad::rope2d(x, 1, {0, 0}, {0, 0}, 100.0);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Rope, PreservesNorms) {
  std::mt19937_64 g(4);
  auto x = gradcheck::random_tensor(g, {1, 1, 4, 8}, -1, 1, false);
  auto y = ad::rope2d(x, 0, {0, 1, 2, 7}, {3, 1, 5, 2}, 100.0);
  for (int t = 0; t < 4; ++t) {
    double nx = 0, ny = 0;
    for (int i = 0; i < 8; ++i) {
      nx += x.data()[size_t(t * 8 + i)] * x.data()[size_t(t * 8 + i)];
      ny += y.data()[size_t(t * 8 + i)] * y.data()[size_t(t * 8 + i)];
    }
    EXPECT_NEAR(nx, ny, 1e-5);
  }
}

TEST(Optim, ZeroGradsNoDecayLeavesParams) {
  ad::ParamSet ps;
  auto w = ps.add("w", Tensor::from({3}, {1.f, -2.f, 0.5f}));
  w.grad();  // allocated, all zero
  ad::AdamW opt(ps, {.weight_decay = 0.0});
  opt.step(1e-2);
  EXPECT_EQ(w.values(), (std::vector<float>{1.f, -2.f, 0.5f}));
}

TEST(Optim, AdamWMatchesHandEvaluation) {
  ad::ParamSet ps;
  auto w = ps.add("w", Tensor::scalar(1.0f));
  ad::AdamW opt(ps, {.beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 0.05});
  // First step from zero state: w = 1, g = 0.5, lr = 0.1.
  //   decay:  1 * (1 - 0.1*0.05)       = 0.995
  //   m = 0.05, v = 0.0125; m^ = 0.5, v^ = 0.25
  //   update: 0.1 * 0.5 / (0.5 + 1e-8) = 0.09999999800
  w.grad()[0] = 0.5f;
  opt.step(0.1);
  EXPECT_NEAR(w.item(), 0.995 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-7);
  // Second step, g = -0.25, lr = 0.05, from m = 0.05, v = 0.0125.
  const double w1 = w.item();
  const double m = 0.9 * 0.05 + 0.1 * -0.25, v = 0.95 * 0.0125 + 0.05 * 0.0625;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.9025);
  const double expect = w1 * (1 - 0.05 * 0.05) - 0.05 * mh / (std::sqrt(vh) + 1e-8);
  w.grad()[0] = -0.25f;
  opt.step(0.05);
  EXPECT_NEAR(w.item(), expect, 1e-6);
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Optim, NoDecayParamsSkipWeightDecay) {
  ad::ParamSet ps;
  auto w = ps.add("bias", Tensor::scalar(2.0f), false);
  w.grad();
  ad::AdamW opt(ps, {.weight_decay = 0.5});
  opt.step(0.1);
  EXPECT_EQ(w.item(), 2.0f);
}

TEST(Optim, ClipGradNorm) {
  ad::ParamSet ps;
  auto a = ps.add("a", Tensor::zeros({2}));
  auto b = ps.add("b", Tensor::zeros({2}));
  // Total norm sqrt(4*1) = 2.
  for (auto* t : {&a, &b})
    for (float& g : t->grad()) g = 1.f;
  EXPECT_NEAR(ad::clip_grad_norm(ps, 1.0), 2.0, 1e-12);
  double sq = 0;
  for (auto* t : {&a, &b})
    for (float g : t->grad()) sq += g * g;
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  // Already inside the ball: untouched.
  const auto before = a.grad()[0];
  EXPECT_NEAR(ad::clip_grad_norm(ps, 5.0), 1.0, 1e-6);
  EXPECT_EQ(a.grad()[0], before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ad::ParamSet ps;
  std::mt19937_64 g(5);
  ps.add("a", gradcheck::random_tensor(g, {3, 4}, -1e3f, 1e3f));
  ps.add("b", Tensor::from({2}, {std::numeric_limits<float>::denorm_min(), -0.f}));
  for (auto& p : ps.params())
    for (float& x : p.tensor.grad()) x = 0.25f;
  ad::AdamW opt(ps, {});
  opt.step(1e-3);
  ad::Checkpoint ck;
  ck.config = "{\"d\":4}";
  ck.config_hash = ad::fnv1a64(ck.config);
  ck.step = 17;
  ad::append_state(ck, ps, &opt);
  const auto path = tmp_path("roundtrip.ckpt");
  ad::save_checkpoint(ck, path);
  const auto back = ad::load_checkpoint(path);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  ASSERT_EQ(back.records.size(), 6u);

  ad::ParamSet ps2;
  ps2.add("a", Tensor::zeros({3, 4}));
  ps2.add("b", Tensor::zeros({2}));
  ad::AdamW opt2(ps2, {});
  ad::restore_state(back, ps2, &opt2);
  for (size_t i = 0; i < 2; ++i) {
    const auto& x = ps.params()[i].tensor.values();
    const auto& y = ps2.params()[i].tensor.values();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * 4), 0);
    EXPECT_EQ(opt.first_moments()[i], opt2.first_moments()[i]);
    EXPECT_EQ(opt.second_moments()[i], opt2.second_moments()[i]);
  }
  EXPECT_EQ(opt2.step_count(), 17);
}

TEST(Checkpoint, TruncatedAndWrongVersionAreErrors) {
  ad::Checkpoint ck;
  ck.config = "{}";
  ck.records.push_back({"w", {4}, {1, 2, 3, 4}});
  const auto path = tmp_path("trunc.ckpt");
  ad::save_checkpoint(ck, path);
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size() - 3));
  }
  try {
    ad::load_checkpoint(path);
    FAIL();
  } catch (const pixl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  bytes[8] = 9;  // version field
  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
  }
  try {
    ad::load_checkpoint(path);
    FAIL();
  } catch (const pixl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, LittleEndianLayout) {
  ad::Checkpoint ck;
  ck.config = "";
  ck.step = 0x0102;
  const auto path = tmp_path("layout.ckpt");
  ad::save_checkpoint(ck, path);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(is)), {});
  // magic(8) version(4) hash(8) len(4) "" step(8) count(4)
  ASSERT_EQ(b.size(), 36u);
  EXPECT_EQ(b[8], 1);
  EXPECT_EQ(b[9], 0);
  EXPECT_EQ(b[24], 0x02);
  EXPECT_EQ(b[25], 0x01);
}
