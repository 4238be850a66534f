#pragma once

// The intrinsic image-formation model I = A⊙S + R, conversion of renderer
// passes into (A, S, R), joint percentile normalization of the HDR terms and
// the 9-channel conditioning stack.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pixl/imgcore.hpp"

namespace pixl {

struct IntrinsicTriplet {
  FloatBuffer albedo;    // A, in [0,1]
  FloatBuffer shading;   // S, >= 0
  FloatBuffer residual;  // R, any real

  int height() const { return albedo.height(); }
  int width() const { return albedo.width(); }

  void validate() const {
    for (const auto* b : {&albedo, &shading, &residual})
      require(b->channels() == 3 && b->same_dims(albedo),
              "IntrinsicTriplet: maps must share 3xHxW dims (" + albedo.dims() + ", " +
                  shading.dims() + ", " + residual.dims() + ")");
    require(albedo.all_finite() && shading.all_finite() && residual.all_finite(),
            "IntrinsicTriplet: non-finite value");
    for (float v : albedo.data()) require(v >= 0.f && v <= 1.f, "IntrinsicTriplet: albedo outside [0,1]");
    for (float v : shading.data()) require(v >= 0.f, "IntrinsicTriplet: negative shading");
  }
};

/// Named HDR buffers with Cycles pass semantics.
struct RenderPasses {
  FloatBuffer diffuse_color, diffuse_direct, diffuse_indirect;
  FloatBuffer glossy_color, glossy_direct, glossy_indirect;
  FloatBuffer transmission_color, transmission_direct, transmission_indirect;
  FloatBuffer volume_direct, volume_indirect;
  FloatBuffer emission;

  static constexpr const char* names[12] = {
      "diffuse_color",      "diffuse_direct",        "diffuse_indirect",
      "glossy_color",       "glossy_direct",         "glossy_indirect",
      "transmission_color", "transmission_direct",   "transmission_indirect",
      "volume_direct",      "volume_indirect",       "emission"};

  static RenderPasses zeros(int height, int width) {
    RenderPasses p;
    for (auto* b : p.all()) *b = FloatBuffer(3, height, width);
    return p;
  }

  std::vector<FloatBuffer*> all() {
    return {&diffuse_color,       &diffuse_direct,        &diffuse_indirect, &glossy_color,
            &glossy_direct,       &glossy_indirect,       &transmission_color,
            &transmission_direct, &transmission_indirect, &volume_direct,
            &volume_indirect,     &emission};
  }
  std::vector<const FloatBuffer*> all() const {
    auto v = const_cast<RenderPasses*>(this)->all();
    return {v.begin(), v.end()};
  }

  void validate() const {
    auto bufs = all();
    for (size_t i = 0; i < bufs.size(); ++i) {
      const auto& b = *bufs[i];
      require(b.channels() == 3 && b.same_dims(*bufs[0]),
              std::string("RenderPasses: ") + names[i] + " has dims " + b.dims() +
                  ", expected " + bufs[0]->dims());
      for (float v : b.data())
        require(std::isfinite(v) && v >= 0.f,
                std::string("RenderPasses: ") + names[i] + " must be finite and non-negative");
    }
  }
};

inline ImageRGB compose_image(const IntrinsicTriplet& t) {
  require(t.shading.same_dims(t.albedo) && t.residual.same_dims(t.albedo) &&
              t.albedo.channels() == 3,
          "compose_image: dimension mismatch");
  FloatBuffer out(3, t.height(), t.width());
  auto a = t.albedo.data(), s = t.shading.data(), r = t.residual.data();
  auto o = out.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a[i] * s[i] + r[i];
  return ImageRGB(std::move(out), ColorSpace::linear);
}

inline IntrinsicTriplet passes_to_intrinsics(const RenderPasses& p) {
  p.validate();
  const int h = p.diffuse_color.height(), w = p.diffuse_color.width();
  IntrinsicTriplet t{FloatBuffer(3, h, w), FloatBuffer(3, h, w), FloatBuffer(3, h, w)};
  const size_t n = t.albedo.size();
  auto d = [](const FloatBuffer& b) { return b.data(); };
  auto dc = d(p.diffuse_color), dd = d(p.diffuse_direct), di = d(p.diffuse_indirect);
  auto gc = d(p.glossy_color), gd = d(p.glossy_direct), gi = d(p.glossy_indirect);
  auto tc = d(p.transmission_color), td = d(p.transmission_direct),
       ti = d(p.transmission_indirect);
  auto vd = d(p.volume_direct), vi = d(p.volume_indirect), em = d(p.emission);
  auto A = t.albedo.data(), S = t.shading.data(), R = t.residual.data();
  for (size_t i = 0; i < n; ++i) {
    A[i] = std::clamp(dc[i], 0.f, 1.f);
    S[i] = std::max(dd[i] + di[i], 0.f);
    R[i] = std::max(gc[i] * (gd[i] + gi[i]) + tc[i] * (td[i] + ti[i]) + (vd[i] + vi[i]) + em[i],
                    0.f);
  }
  return t;
}

// Inclusive percentile: element at index ceil(p*N)-1 of the ascending order.
inline size_t percentile_index(size_t n, double p) {
  require(n > 0, "percentile of empty buffer");
  require(p > 0.0 && p <= 1.0, "percentile fraction must lie in (0,1]");
  auto k = size_t(std::ceil(p * double(n) - 1e-9));
  return std::clamp<size_t>(k, 1, n) - 1;
}

inline float percentile(std::span<const float> values, double p) {
  std::vector<float> v(values.begin(), values.end());
  const size_t k = percentile_index(v.size(), p);
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(k), v.end());
  return v[k];
}

struct RescaledHdr {
  FloatBuffer shading, residual;
  float tau;
};

inline constexpr double kDefaultPercentile = 0.98;
inline constexpr float kDefaultRescaleEps = 1e-4f;

/// Joint percentile normalization: one cutoff τ shared by S and R so their
/// relative magnitudes survive.
inline RescaledHdr percentile_rescale(const FloatBuffer& shading, const FloatBuffer& residual,
                                      double p = kDefaultPercentile,
                                      float eps = kDefaultRescaleEps) {
  require(!shading.empty() && !residual.empty(), "percentile_rescale: empty buffer");
  const float tau = std::max({percentile(shading.data(), p), percentile(residual.data(), p), eps});
  auto rescale = [tau](const FloatBuffer& b) {
    FloatBuffer out = b;
    for (float& v : out.data()) v = std::clamp(v, 0.f, tau) / tau;
    return out;
  };
  return {rescale(shading), rescale(residual), tau};
}

inline IntrinsicTriplet rescale_triplet(const IntrinsicTriplet& t, double p = kDefaultPercentile,
                                        float eps = kDefaultRescaleEps) {
  auto r = percentile_rescale(t.shading, t.residual, p, eps);
  return {t.albedo, std::move(r.shading), std::move(r.residual)};
}

/// 9×H×W stack [A ; S ; R] with every channel in [0,1].
class ConditioningStack {
 public:
  static constexpr int kChannels = 9;

  ConditioningStack() = default;
  explicit ConditioningStack(FloatBuffer data) : data_(std::move(data)) {
    require(data_.channels() == kChannels,
            "ConditioningStack needs 9 channels, got " + data_.dims());
    for (float v : data_.data())
      require(v >= 0.f && v <= 1.f, "ConditioningStack: value outside [0,1]");
  }

  const FloatBuffer& data() const { return data_; }
  int height() const { return data_.height(); }
  int width() const { return data_.width(); }
  FloatBuffer albedo() const { return data_.channel_slice(0, 3); }
  FloatBuffer shading() const { return data_.channel_slice(3, 6); }
  FloatBuffer residual() const { return data_.channel_slice(6, 9); }

  friend bool operator==(const ConditioningStack&, const ConditioningStack&) = default;

 private:
  FloatBuffer data_;
};

inline ConditioningStack build_conditioning(const IntrinsicTriplet& t) {
  require(t.shading.same_dims(t.albedo) && t.residual.same_dims(t.albedo),
          "build_conditioning: dimension mismatch");
  const FloatBuffer parts[] = {t.albedo, t.shading, t.residual};
  return ConditioningStack(FloatBuffer::concat_channels(parts));
}

}  // namespace pixl
