#pragma once

// Stochastic corruption of the conditioning stack. Eight independently gated
// augmentations in four families, applied photometric -> structural -> noise
// -> frequency under a global gate, then clipped back to [0,1].
//
// Randomness comes from counter-style substreams keyed on
// (seed, sample_id, augmentation), so the outcome for a sample never depends
// on the order samples are processed in.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pixl/imgcore.hpp"
#include "pixl/intrinsics.hpp"

namespace pixl {

class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) : seed_(seed) {}
  uint64_t seed() const { return seed_; }

  std::mt19937_64 substream(uint64_t sample_id, uint64_t stream_id) const {
    std::seed_seq seq{uint32_t(seed_), uint32_t(seed_ >> 32), uint32_t(sample_id),
                      uint32_t(sample_id >> 32), uint32_t(stream_id), uint32_t(stream_id >> 32)};
    return std::mt19937_64(seq);
  }

 private:
  uint64_t seed_;
};

struct Range {
  double lo = 0, hi = 0;
  bool contains(const Range& inner) const { return inner.lo >= lo && inner.hi <= hi; }
  double draw(std::mt19937_64& g) const {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(g);
  }
};

struct AugmentConfig {
  double p_apply = 0.70;

  struct ColorCast { double p = 0.50; Range scale{0.85, 1.15}; Range bias{-0.06, 0.06}; } color_cast;
  struct Gamma { double p = 0.30; Range gamma{0.75, 1.35}; } gamma;
  struct Holes { double p = 0.50; Range fraction{0.005, 0.040}; double edge_bias_p = 0.5; } holes;
  struct EdgeCracks { double p = 0.50; Range quantile{0.92, 0.99}; Range strength{0.4, 1.0}; } edge_cracks;
  struct SaltPepper { double p = 0.25; Range fraction{0.0, 0.003}; } salt_pepper;
  struct GaussianNoise { double p = 0.50; Range sigma{0.0, 0.04}; } gaussian_noise;
  struct GaussianBlur { double p = 0.25; Range sigma{0.4, 1.2}; } gaussian_blur;
  struct Posterize { double p = 0.25; Range levels{12, 64}; } posterize;

  // Every gate off; the pipeline becomes the identity.
  static AugmentConfig disabled() {
    AugmentConfig c;
    c.p_apply = 0;
    return c;
  }

  // Ranges may be narrowed but never widened beyond the reference table.
  void validate() const {
    const AugmentConfig ref;
    auto prob = [](double p, const char* what) {
      require(p >= 0.0 && p <= 1.0, std::string("augment: probability ") + what + " outside [0,1]");
    };
    auto range = [](const Range& r, const Range& allowed, const char* what) {
      require(r.lo <= r.hi, std::string("augment: ") + what + " range has lower > upper");
      require(allowed.contains(r), std::string("augment: ") + what + " range [" +
                                       std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                                       "] exceeds [" + std::to_string(allowed.lo) + ", " +
                                       std::to_string(allowed.hi) + "]");
    };
    prob(p_apply, "p_apply");
    prob(color_cast.p, "color_cast");
    prob(gamma.p, "gamma");
    prob(holes.p, "holes");
    prob(holes.edge_bias_p, "holes.edge_bias");
    prob(edge_cracks.p, "edge_cracks");
    prob(salt_pepper.p, "salt_pepper");
    prob(gaussian_noise.p, "gaussian_noise");
    prob(gaussian_blur.p, "gaussian_blur");
    prob(posterize.p, "posterize");
    range(color_cast.scale, ref.color_cast.scale, "color_cast.scale");
    range(color_cast.bias, ref.color_cast.bias, "color_cast.bias");
    range(gamma.gamma, ref.gamma.gamma, "gamma");
    range(holes.fraction, ref.holes.fraction, "holes.fraction");
    range(edge_cracks.quantile, ref.edge_cracks.quantile, "edge_cracks.quantile");
    range(edge_cracks.strength, ref.edge_cracks.strength, "edge_cracks.strength");
    range(salt_pepper.fraction, ref.salt_pepper.fraction, "salt_pepper.fraction");
    range(gaussian_noise.sigma, ref.gaussian_noise.sigma, "gaussian_noise.sigma");
    range(gaussian_blur.sigma, ref.gaussian_blur.sigma, "gaussian_blur.sigma");
    range(posterize.levels, ref.posterize.levels, "posterize.levels");
  }
};

enum class Aug { color_cast, gamma, holes, edge_cracks, salt_pepper, gaussian_noise, gaussian_blur, posterize };
inline constexpr int kNumAugs = 8;
inline constexpr std::array<Aug, kNumAugs> kCanonicalOrder = {
    Aug::color_cast,  Aug::gamma,          Aug::holes,         Aug::edge_cracks,
    Aug::salt_pepper, Aug::gaussian_noise, Aug::gaussian_blur, Aug::posterize};
inline constexpr const char* aug_name(Aug a) {
  constexpr const char* names[] = {"color_cast",  "gamma",          "holes",         "edge_cracks",
                                   "salt_pepper", "gaussian_noise", "gaussian_blur", "posterize"};
  return names[int(a)];
}

// ---------------------------------------------------------------------------
// Individual augmentations. They operate in place on a C×H×W buffer; the
// per-group ones take the first channel of the group.

inline constexpr int kGroupChannels = 3;

inline void color_cast(FloatBuffer& buf, int first_channel, const std::array<float, 3>& scale,
                       const std::array<float, 3>& bias) {
  for (int c = 0; c < kGroupChannels; ++c)
    for (float& v : buf.plane(first_channel + c)) v = scale[c] * v + bias[c];
}

inline void gamma(FloatBuffer& buf, int first_channel, const std::array<float, 3>& g) {
  for (int c = 0; c < kGroupChannels; ++c) {
    require(g[c] > 0.f, "gamma: exponent must be positive");
    if (g[c] == 1.f) continue;
    for (float& v : buf.plane(first_channel + c)) v = std::pow(std::max(v, 0.f), g[c]);
  }
}

// 3×3 Sobel gradient magnitude with replicated borders.
inline std::vector<float> sobel_magnitude(std::span<const float> img, int h, int w) {
  std::vector<float> mag(img.size());
  auto px = [&](int y, int x) {
    return img[size_t(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                 (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      float gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                 (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      mag[size_t(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return mag;
}

// Mean of the shading group's channels.
inline std::vector<float> shading_luminance(const FloatBuffer& buf) {
  std::vector<float> lum(buf.plane_size(), 0.f);
  for (int c = 3; c < 6; ++c) {
    auto p = buf.plane(c);
    for (size_t i = 0; i < lum.size(); ++i) lum[i] += p[i];
  }
  for (float& v : lum) v /= 3.f;
  return lum;
}

/// Replaces the top `fraction` of pixels, ranked by a smooth random mask
/// (optionally mixed with the normalized edge map), with the per-channel
/// minimum plus a noise floor in [0, 0.01). Returns the number of pixels hit.
inline size_t holes(FloatBuffer& buf, double fraction, bool edge_bias, std::mt19937_64& g) {
  const int h = buf.height(), w = buf.width();
  const size_t n = buf.plane_size();
  const int gh = std::max(2, h / 8), gw = std::max(2, w / 8);
  FloatBuffer grid(1, gh, gw);
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  for (float& v : grid.data()) v = u01(g);
  FloatBuffer mask = resize_bilinear(grid, h, w);
  if (edge_bias) {
    auto edges = sobel_magnitude(shading_luminance(buf), h, w);
    const float mx = *std::max_element(edges.begin(), edges.end());
    auto m = mask.data();
    for (size_t i = 0; i < n; ++i) m[i] = 0.5f * m[i] + 0.5f * (mx > 0 ? edges[i] / mx : 0.f);
  }
  const auto k = size_t(std::ceil(fraction * double(n) - 1e-9));
  if (k == 0) return 0;
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto m = mask.data();
  std::nth_element(order.begin(), order.begin() + std::ptrdiff_t(k - 1), order.end(),
                   [&](uint32_t a, uint32_t b) { return m[a] > m[b] || (m[a] == m[b] && a < b); });
  std::vector<float> mins(buf.channels());
  for (int c = 0; c < buf.channels(); ++c) {
    auto p = buf.plane(c);
    mins[c] = *std::min_element(p.begin(), p.end());
  }
  std::uniform_real_distribution<float> floor_noise(0.f, 0.01f);
  for (size_t j = 0; j < k; ++j)
    for (int c = 0; c < buf.channels(); ++c) buf.plane(c)[order[j]] = mins[c] + floor_noise(g);
  return k;
}

/// Darkens a dilated silhouette mask taken from the strongest shading edges.
/// Returns the mask (1 = darkened) for inspection.
inline std::vector<uint8_t> edge_cracks(FloatBuffer& buf, double quantile, double strength) {
  const int h = buf.height(), w = buf.width();
  auto mag = sobel_magnitude(shading_luminance(buf), h, w);
  const float thr = percentile(mag, quantile);
  std::vector<uint8_t> seed(mag.size()), mask(mag.size(), 0);
  for (size_t i = 0; i < mag.size(); ++i) seed[i] = mag[i] > thr;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t hit = 0;
      for (int dy = -1; dy <= 1 && !hit; ++dy)
        for (int dx = -1; dx <= 1 && !hit; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) hit = seed[size_t(yy) * w + xx];
        }
      mask[size_t(y) * w + x] = hit;
    }
  const float keep = float(1.0 - strength);
  for (int c = 0; c < buf.channels(); ++c) {
    auto p = buf.plane(c);
    for (size_t i = 0; i < p.size(); ++i)
      if (mask[i]) p[i] *= keep;
  }
  return mask;
}

inline size_t salt_pepper(FloatBuffer& buf, double fraction, std::mt19937_64& g) {
  std::bernoulli_distribution hit(fraction), coin(0.5);
  size_t count = 0;
  for (size_t i = 0; i < buf.plane_size(); ++i) {
    if (!hit(g)) continue;
    const float v = coin(g) ? 1.f : 0.f;
    for (int c = 0; c < buf.channels(); ++c) buf.plane(c)[i] = v;
    ++count;
  }
  return count;
}

inline void gaussian_noise(FloatBuffer& buf, double sigma, std::mt19937_64& g) {
  if (sigma <= 0) return;
  std::normal_distribution<float> n(0.f, float(sigma));
  for (float& v : buf.data()) v += n(g);
}

inline std::vector<float> gaussian_kernel(double sigma) {
  const int r = int(std::ceil(3 * sigma));
  std::vector<float> k(2 * r + 1);
  double total = 0;
  for (int i = -r; i <= r; ++i) total += std::exp(-0.5 * i * i / (sigma * sigma));
  for (int i = -r; i <= r; ++i) k[i + r] = float(std::exp(-0.5 * i * i / (sigma * sigma)) / total);
  return k;
}

// Separable blur, radius ceil(3σ), replicated borders.
inline void gaussian_blur(FloatBuffer& buf, double sigma) {
  if (sigma <= 0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = int(k.size() / 2), h = buf.height(), w = buf.width();
  std::vector<float> tmp(buf.plane_size());
  for (int c = 0; c < buf.channels(); ++c) {
    auto p = buf.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * p[size_t(y) * w + std::clamp(x + i, 0, w - 1)];
        tmp[size_t(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[size_t(std::clamp(y + i, 0, h - 1)) * w + x];
        p[size_t(y) * w + x] = acc;
      }
  }
}

inline void posterize(FloatBuffer& buf, int levels) {
  require(levels >= 2, "posterize: need at least 2 levels");
  const float q = float(levels - 1);
  for (float& v : buf.data()) v = std::round(v * q) / q;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Everything drawn for one sample: the gate, which augmentations fire and
/// with what strength. Applying a plan is deterministic.
struct AugmentPlan {
  bool applied = false;
  std::array<bool, kNumAugs> fired{};

  std::array<std::array<float, 3>, 3> cast_scale{}, cast_bias{};  // [group][channel]
  std::array<std::array<float, 3>, 3> gamma{};
  double hole_fraction = 0;
  bool hole_edge_bias = false;
  double crack_quantile = 0, crack_strength = 0;
  double sp_fraction = 0;
  double noise_sigma = 0;
  double blur_sigma = 0;
  int levels = 0;
  // Seeds for the augmentations that consume randomness while applying.
  uint64_t holes_seed = 0, sp_seed = 0, noise_seed = 0;

  bool fires(Aug a) const { return applied && fired[int(a)]; }
};

inline AugmentPlan draw_plan(const AugmentConfig& cfg, const RngStream& rng, uint64_t sample_id) {
  AugmentPlan plan;
  auto gate = rng.substream(sample_id, 0);
  plan.applied = std::bernoulli_distribution(cfg.p_apply)(gate);
  if (!plan.applied) return plan;

  const double probs[kNumAugs] = {cfg.color_cast.p,  cfg.gamma.p,          cfg.holes.p,
                                  cfg.edge_cracks.p, cfg.salt_pepper.p,    cfg.gaussian_noise.p,
                                  cfg.gaussian_blur.p, cfg.posterize.p};
  for (int a = 0; a < kNumAugs; ++a) {
    auto g = rng.substream(sample_id, uint64_t(a) + 1);
    plan.fired[a] = std::bernoulli_distribution(probs[a])(g);
    if (!plan.fired[a]) continue;
    switch (Aug(a)) {
      case Aug::color_cast:
        for (auto grp = 0; grp < 3; ++grp)
          for (int c = 0; c < 3; ++c) {
            plan.cast_scale[grp][c] = float(cfg.color_cast.scale.draw(g));
            plan.cast_bias[grp][c] = float(cfg.color_cast.bias.draw(g));
          }
        break;
      case Aug::gamma:
        for (auto grp = 0; grp < 3; ++grp)
          for (int c = 0; c < 3; ++c) plan.gamma[grp][c] = float(cfg.gamma.gamma.draw(g));
        break;
      case Aug::holes:
        plan.hole_fraction = cfg.holes.fraction.draw(g);
        plan.hole_edge_bias = std::bernoulli_distribution(cfg.holes.edge_bias_p)(g);
        plan.holes_seed = g();
        break;
      case Aug::edge_cracks:
        plan.crack_quantile = cfg.edge_cracks.quantile.draw(g);
        plan.crack_strength = cfg.edge_cracks.strength.draw(g);
        break;
      case Aug::salt_pepper:
        plan.sp_fraction = cfg.salt_pepper.fraction.draw(g);
        plan.sp_seed = g();
        break;
      case Aug::gaussian_noise:
        plan.noise_sigma = cfg.gaussian_noise.sigma.draw(g);
        plan.noise_seed = g();
        break;
      case Aug::gaussian_blur:
        plan.blur_sigma = cfg.gaussian_blur.sigma.draw(g);
        break;
      case Aug::posterize: {
        std::uniform_int_distribution<int> lv(int(std::lround(cfg.posterize.levels.lo)),
                                              int(std::lround(cfg.posterize.levels.hi)));
        plan.levels = lv(g);
        break;
      }
    }
  }
  return plan;
}

inline FloatBuffer apply_plan(const FloatBuffer& input, const AugmentPlan& plan,
                              std::span<const Aug> order = kCanonicalOrder) {
  if (!plan.applied) return input;
  FloatBuffer buf = input;
  for (Aug a : order) {
    if (!plan.fires(a)) continue;
    switch (a) {
      case Aug::color_cast:
        for (int grp = 0; grp < 3; ++grp)
          color_cast(buf, grp * 3, plan.cast_scale[grp], plan.cast_bias[grp]);
        break;
      case Aug::gamma:
        for (int grp = 0; grp < 3; ++grp) gamma(buf, grp * 3, plan.gamma[grp]);
        break;
      case Aug::holes: {
        std::mt19937_64 g(plan.holes_seed);
        holes(buf, plan.hole_fraction, plan.hole_edge_bias, g);
        break;
      }
      case Aug::edge_cracks:
        edge_cracks(buf, plan.crack_quantile, plan.crack_strength);
        break;
      case Aug::salt_pepper: {
        std::mt19937_64 g(plan.sp_seed);
        salt_pepper(buf, plan.sp_fraction, g);
        break;
      }
      case Aug::gaussian_noise: {
        std::mt19937_64 g(plan.noise_seed);
        gaussian_noise(buf, plan.noise_sigma, g);
        break;
      }
      case Aug::gaussian_blur:
        gaussian_blur(buf, plan.blur_sigma);
        break;
      case Aug::posterize:
        posterize(buf, plan.levels);
        break;
    }
  }
  for (float& v : buf.data()) v = std::clamp(v, 0.f, 1.f);
  return buf;
}

inline ConditioningStack augment_conditioning(const ConditioningStack& stack,
                                              const AugmentConfig& cfg, const RngStream& rng,
                                              uint64_t sample_id) {
  auto plan = draw_plan(cfg, rng, sample_id);
  if (!plan.applied) return stack;
  return ConditioningStack(apply_plan(stack.data(), plan));
}

}  // namespace pixl
