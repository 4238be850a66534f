#pragma once

// Procedural paired multi-illumination scenes with exact intrinsics.
//
// A scene is a ground plane, a back wall and 1-5 textured spheres/boxes seen
// through a pinhole camera. Rendering is direct lighting only (Lambert +
// Blinn-Phong, binary shadow rays, plus a constant ambient term that lands in
// diffuse_indirect), so the beauty image equals A⊙S + R before clipping.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <random>
#include <string>
#include <vector>

#include "pixl/imgcore.hpp"
#include "pixl/intrinsics.hpp"
#include "pixl/kv.hpp"

namespace pixl {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator*(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  double operator[](int i) const { return i == 0 ? x : i == 1 ? y : z; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(const Vec3& a) { return a * (1.0 / length(a)); }

// ---------------------------------------------------------------------------
// Materials

struct Texture {
  enum class Kind { solid, checker, stripes, noise } kind = Kind::solid;
  Vec3 color_a{0.5, 0.5, 0.5}, color_b{0.5, 0.5, 0.5};
  double scale = 1.0;  // features per meter
  uint32_t seed = 0;   // noise lattice

  friend bool operator==(const Texture&, const Texture&) = default;
};

namespace detail {

inline double lattice(uint32_t seed, int64_t x, int64_t y, int64_t z) {
  uint64_t h = seed * 0x9E3779B97F4A7C15ull;
  for (int64_t v : {x, y, z}) {
    h ^= uint64_t(v) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 31;
  }
  return double(h >> 11) * (1.0 / double(1ull << 53));
}

// Trilinear value noise in [0,1] with smoothstep fade.
inline double value_noise(uint32_t seed, const Vec3& p) {
  const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
  const auto ix = int64_t(fx), iy = int64_t(fy), iz = int64_t(fz);
  auto fade = [](double t) { return t * t * (3 - 2 * t); };
  const double tx = fade(p.x - fx), ty = fade(p.y - fy), tz = fade(p.z - fz);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        acc += lattice(seed, ix + dx, iy + dy, iz + dz) * (dx ? tx : 1 - tx) *
               (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
  return acc;
}

}  // namespace detail

inline Vec3 sample_texture(const Texture& t, const Vec3& p) {
  const Vec3 q = p * t.scale;
  double mix = 0;
  switch (t.kind) {
    case Texture::Kind::solid: mix = 0; break;
    case Texture::Kind::checker:
      mix = double((int64_t(std::floor(q.x)) + int64_t(std::floor(q.y + 1e-7)) +
                    int64_t(std::floor(q.z))) & 1);
      break;
    case Texture::Kind::stripes: mix = double(int64_t(std::floor(q.x + q.z)) & 1); break;
    case Texture::Kind::noise: mix = detail::value_noise(t.seed, q); break;
  }
  return t.color_a * (1 - mix) + t.color_b * mix;
}

struct Material {
  Texture albedo;
  Vec3 specular_tint{0.2, 0.2, 0.2};
  double shininess = 32;
  friend bool operator==(const Material&, const Material&) = default;
};

// ---------------------------------------------------------------------------
// Geometry

struct Primitive {
  enum class Kind { plane, sphere, box } kind = Kind::sphere;
  Vec3 a;  // plane: point, sphere: center, box: min corner
  Vec3 b;  // plane: unit normal, box: max corner
  double radius = 0;
  Material material;
  friend bool operator==(const Primitive&, const Primitive&) = default;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  int primitive = -1;
};

inline std::optional<Hit> intersect(const Primitive& prim, const Vec3& o, const Vec3& d,
                                    double t_min) {
  switch (prim.kind) {
    case Primitive::Kind::plane: {
      const double denom = dot(prim.b, d);
      if (std::abs(denom) < 1e-12) return std::nullopt;
      const double t = dot(prim.a - o, prim.b) / denom;
      if (t <= t_min) return std::nullopt;
      return Hit{t, prim.b, -1};
    }
    case Primitive::Kind::sphere: {
      const Vec3 oc = o - prim.a;
      const double bq = dot(oc, d), c = dot(oc, oc) - prim.radius * prim.radius;
      const double disc = bq * bq - c;
      if (disc < 0) return std::nullopt;
      const double s = std::sqrt(disc);
      double t = -bq - s;
      if (t <= t_min) t = -bq + s;
      if (t <= t_min) return std::nullopt;
      return Hit{t, normalize(o + d * t - prim.a), -1};
    }
    case Primitive::Kind::box: {
      double t0 = -std::numeric_limits<double>::infinity(), t1 = -t0;
      int axis0 = 0, axis1 = 0;
      for (int i = 0; i < 3; ++i) {
        const double inv = 1.0 / d[i];
        double ta = (prim.a[i] - o[i]) * inv, tb = (prim.b[i] - o[i]) * inv;
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) { t0 = ta; axis0 = i; }
        if (tb < t1) { t1 = tb; axis1 = i; }
      }
      if (t0 > t1) return std::nullopt;
      double t = t0;
      int axis = axis0;
      if (t <= t_min) { t = t1; axis = axis1; }
      if (t <= t_min) return std::nullopt;
      Vec3 n{};
      const double sign = d[axis] > 0 ? -1.0 : 1.0;
      // Exiting through a face flips the outward normal.
      const double outward = (t == t0) ? sign : -sign;
      (axis == 0 ? n.x : axis == 1 ? n.y : n.z) = outward;
      return Hit{t, n, -1};
    }
  }
  return std::nullopt;
}

struct Camera {
  Vec3 position{0, 1.6, 4.5};
  Vec3 target{0, 0.5, 0};
  double fov_deg = 40;
  friend bool operator==(const Camera&, const Camera&) = default;
};

struct SceneDesc {
  int height = 128, width = 128;
  Camera camera;
  std::vector<Primitive> primitives;
  friend bool operator==(const SceneDesc&, const SceneDesc&) = default;

  std::optional<Hit> trace(const Vec3& o, const Vec3& d, double t_min = 1e-9) const {
    std::optional<Hit> best;
    for (size_t i = 0; i < primitives.size(); ++i)
      if (auto h = intersect(primitives[i], o, d, t_min); h && (!best || h->t < best->t)) {
        h->primitive = int(i);
        best = h;
      }
    return best;
  }

  bool occluded(const Vec3& o, const Vec3& d, double t_max) const {
    for (const auto& p : primitives)
      if (auto h = intersect(p, o, d, 1e-9); h && h->t < t_max) return true;
    return false;
  }

  // Unit ray direction through the center of pixel (y, x).
  Vec3 primary_ray(int y, int x) const {
    const Vec3 fwd = normalize(camera.target - camera.position);
    const Vec3 right = normalize(cross(fwd, {0, 1, 0}));
    const Vec3 up = cross(right, fwd);
    const double half = std::tan(camera.fov_deg * M_PI / 360.0);
    const double aspect = double(width) / height;
    const double u = ((x + 0.5) / width * 2 - 1) * half * aspect;
    const double v = (1 - (y + 0.5) / height * 2) * half;
    return normalize(fwd + right * u + up * v);
  }
};

/// A scene resolved to per-pixel geometry and material buffers.
struct Scene {
  SceneDesc desc;
  FloatBuffer position;       // 3×H×W, meters
  FloatBuffer normal;         // 3×H×W, unit
  FloatBuffer albedo;         // 3×H×W, [0,1]
  FloatBuffer specular_tint;  // 3×H×W, [0,1]
  FloatBuffer shininess;      // 1×H×W, >= 1
  // Positions and normals at full precision for shading.
  std::vector<Vec3> position_d, normal_d;

  int height() const { return desc.height; }
  int width() const { return desc.width; }
};

inline Scene build_scene(const SceneDesc& desc) {
  require(desc.height > 0 && desc.width > 0, "scene resolution must be positive");
  require(!desc.primitives.empty(), "scene has no primitives");
  Scene s;
  s.desc = desc;
  const int h = desc.height, w = desc.width;
  s.position = FloatBuffer(3, h, w);
  s.normal = FloatBuffer(3, h, w);
  s.albedo = FloatBuffer(3, h, w);
  s.specular_tint = FloatBuffer(3, h, w);
  s.shininess = FloatBuffer(1, h, w, 1.f);
  s.position_d.assign(size_t(h) * w, {});
  s.normal_d.assign(size_t(h) * w, {0, 1, 0});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vec3 d = desc.primary_ray(y, x);
      auto hit = desc.trace(desc.camera.position, d);
      if (!hit) throw Error("scene: camera ray misses every primitive at pixel (" +
                            std::to_string(y) + ", " + std::to_string(x) + ")");
      const Vec3 p = desc.camera.position + d * hit->t;
      const Vec3 n = hit->normal;
      const auto& m = desc.primitives[size_t(hit->primitive)].material;
      const Vec3 a = sample_texture(m.albedo, p);
      s.position_d[size_t(y) * w + x] = p;
      s.normal_d[size_t(y) * w + x] = n;
      for (int c = 0; c < 3; ++c) {
        s.position.at(c, y, x) = float(p[c]);
        s.normal.at(c, y, x) = float(n[c]);
        s.albedo.at(c, y, x) = std::clamp(float(a[c]), 0.f, 1.f);
        s.specular_tint.at(c, y, x) = std::clamp(float(m.specular_tint[c]), 0.f, 1.f);
      }
      s.shininess.at(0, y, x) = float(std::max(1.0, m.shininess));
    }
  return s;
}

inline Vec3 random_color(std::mt19937_64& g, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(g), u(g), u(g)};
}

inline Texture random_texture(std::mt19937_64& g) {
  Texture t;
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_real_distribution<double> scale(1.5, 5.0);
  t.kind = Texture::Kind(kind(g));
  t.color_a = random_color(g, 0.1, 0.9);
  t.color_b = random_color(g, 0.1, 0.9);
  t.scale = scale(g);
  t.seed = uint32_t(g());
  return t;
}

inline Material random_material(std::mt19937_64& g) {
  std::uniform_real_distribution<double> tint(0.0, 0.5), shine(8.0, 96.0);
  Material m;
  m.albedo = random_texture(g);
  const double gray = tint(g);
  m.specular_tint = {gray, gray, gray};
  m.shininess = shine(g);
  return m;
}

// Ground plane through the origin, wall behind the objects.
inline Primitive ground_plane(const Material& m) {
  return {Primitive::Kind::plane, {0, 0, 0}, {0, 1, 0}, 0, m};
}
inline Primitive back_wall(const Material& m) {
  return {Primitive::Kind::plane, {0, 0, -3}, {0, 0, 1}, 0, m};
}

/// Deterministic random scene: ground, wall and 1-5 objects.
inline SceneDesc generate_scene_desc(uint64_t seed, int height = 128, int width = 128) {
  std::seed_seq seq{uint32_t(seed), uint32_t(seed >> 32), 0x5CE7Eu};
  std::mt19937_64 g(seq);
  SceneDesc d;
  d.height = height;
  d.width = width;
  d.primitives.push_back(ground_plane(random_material(g)));
  d.primitives.push_back(back_wall(random_material(g)));
  // Ground always textured so every scene has a textured region.
  if (d.primitives[0].material.albedo.kind == Texture::Kind::solid)
    d.primitives[0].material.albedo.kind = Texture::Kind::checker;
  std::uniform_int_distribution<int> count(1, 5), kind(0, 1);
  std::uniform_real_distribution<double> px(-1.7, 1.7), pz(-1.6, 1.4), size(0.3, 0.7);
  const int n = count(g);
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.material = random_material(g);
    const double cx = px(g), cz = pz(g), r = size(g);
    if (kind(g) == 0) {
      p.kind = Primitive::Kind::sphere;
      p.a = {cx, r, cz};
      p.radius = r;
    } else {
      p.kind = Primitive::Kind::box;
      const double hgt = size(g) * 1.6;
      p.a = {cx - r, 0, cz - r};
      p.b = {cx + r, hgt, cz + r};
    }
    d.primitives.push_back(p);
  }
  return d;
}

inline Scene generate_scene(uint64_t seed, int height = 128, int width = 128) {
  return build_scene(generate_scene_desc(seed, height, width));
}

// ---------------------------------------------------------------------------
// Lights

struct LightSpec {
  enum class Kind { point, directional, ambient } kind = Kind::point;
  Vec3 vec;  // point: position; directional: unit direction of travel
  Vec3 color{1, 1, 1};
  double intensity = 1;
  friend bool operator==(const LightSpec&, const LightSpec&) = default;

  void validate() const {
    require(std::isfinite(intensity) && intensity >= 0, "light intensity must be finite and >= 0");
    require(color.x >= 0 && color.y >= 0 && color.z >= 0, "light color must be non-negative");
    if (kind == Kind::directional)
      require(std::abs(length(vec) - 1) < 1e-6, "directional light needs a unit direction");
  }
};

// Approximate blackbody color, normalized so the largest channel is 1.
inline Vec3 color_temperature(double kelvin) {
  const double t = std::clamp(kelvin, 1000.0, 40000.0) / 100.0;
  double r, g, b;
  if (t <= 66) {
    r = 255;
    g = 99.4708025861 * std::log(t) - 161.1195681661;
    b = t <= 19 ? 0 : 138.5177312231 * std::log(t - 10) - 305.0447927307;
  } else {
    r = 329.698727446 * std::pow(t - 60, -0.1332047592);
    g = 288.1221695283 * std::pow(t - 60, -0.0755148492);
    b = 255;
  }
  Vec3 c{std::clamp(r, 0.0, 255.0), std::clamp(g, 0.0, 255.0), std::clamp(b, 0.0, 255.0)};
  const double mx = std::max({c.x, c.y, c.z});
  return c * (1.0 / mx);
}

struct LightingRanges {
  double point_intensity_lo = 6, point_intensity_hi = 20;
  double directional_intensity_lo = 0.6, directional_intensity_hi = 1.4;
  double ambient_intensity_lo = 0.03, ambient_intensity_hi = 0.15;
  double kelvin_lo = 2500, kelvin_hi = 9000;
};

inline const std::vector<std::string>& lighting_presets() {
  static const std::vector<std::string> names = {"cool side flash", "warm overhead flash",
                                                 "dim overhead spot", "soft frontal sun",
                                                 "warm interior sun"};
  return names;
}

inline std::vector<LightSpec> preset_lighting(const std::string& name) {
  using K = LightSpec::Kind;
  if (name == "cool side flash") return {{K::point, {3.0, 1.5, 1.5}, color_temperature(8000), 14}};
  if (name == "warm overhead flash")
    return {{K::point, {0.0, 3.5, 0.5}, color_temperature(3200), 16}};
  if (name == "dim overhead spot") return {{K::point, {0.0, 2.5, 0.0}, color_temperature(4000), 4}};
  if (name == "soft frontal sun")
    return {{K::directional, normalize({0.0, -0.35, -1.0}), color_temperature(5200), 0.9}};
  if (name == "warm interior sun")
    return {{K::directional, normalize({-0.8, -0.45, -0.3}), color_temperature(3000), 1.1}};
  throw Error("unknown lighting preset '" + name + "'");
}

/// 1-3 random lights; the first is always a point or directional light.
inline std::vector<LightSpec> sample_lighting(uint64_t seed, const LightingRanges& r = {}) {
  std::seed_seq seq{uint32_t(seed), uint32_t(seed >> 32), 0x11647u};
  std::mt19937_64 g(seq);
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_real_distribution<double> u(0, 1);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(g); };
  const int n = count(g);
  std::vector<LightSpec> out;
  for (int i = 0; i < n; ++i) {
    LightSpec l;
    const double pick = u(g);
    l.kind = i == 0 ? (pick < 0.5 ? LightSpec::Kind::point : LightSpec::Kind::directional)
                    : (pick < 0.4 ? LightSpec::Kind::point
                                  : pick < 0.7 ? LightSpec::Kind::directional
                                               : LightSpec::Kind::ambient);
    l.color = color_temperature(in(r.kelvin_lo, r.kelvin_hi));
    // The back wall is an infinite plane, so directional light must arrive
    // from the camera side of it; point lights sit in front of it anyway.
    const double spread = l.kind == LightSpec::Kind::directional ? 0.45 : 0.7;
    const double azimuth = in(-M_PI * spread, M_PI * spread);
    switch (l.kind) {
      case LightSpec::Kind::point: {
        const double radius = in(2.0, 3.5), height = in(1.0, 3.5);
        l.vec = {radius * std::sin(azimuth), height, radius * std::cos(azimuth)};
        l.intensity = in(r.point_intensity_lo, r.point_intensity_hi);
        break;
      }
      case LightSpec::Kind::directional: {
        const double elevation = in(20.0, 80.0) * M_PI / 180;
        const Vec3 to_light{std::cos(elevation) * std::sin(azimuth), std::sin(elevation),
                            std::cos(elevation) * std::cos(azimuth)};
        l.vec = -normalize(to_light);
        l.intensity = in(r.directional_intensity_lo, r.directional_intensity_hi);
        break;
      }
      case LightSpec::Kind::ambient:
        l.intensity = in(r.ambient_intensity_lo, r.ambient_intensity_hi);
        break;
    }
    out.push_back(l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderOutput {
  RenderPasses passes;
  ImageRGB beauty;  // linear, unclipped, accumulated independently of the passes
};

inline constexpr double kShadowBias = 1e-6;

inline RenderOutput render(const Scene& scene, std::span<const LightSpec> lights) {
  require(!lights.empty(), "render_passes: need at least one light");
  for (const auto& l : lights) l.validate();
  const int h = scene.height(), w = scene.width();
  RenderOutput out{RenderPasses::zeros(h, w), ImageRGB(h, w, ColorSpace::linear)};
  auto& P = out.passes;
  P.diffuse_color = scene.albedo;
  P.glossy_color = scene.specular_tint;
  const Vec3 cam = scene.desc.camera.position;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = size_t(y) * w + x;
      const Vec3 p = scene.position_d[i], n = scene.normal_d[i];
      const Vec3 v = normalize(cam - p);
      const double shine = scene.shininess.at(0, y, x);
      Vec3 albedo, tint;
      for (int c = 0; c < 3; ++c) {
        (c == 0 ? albedo.x : c == 1 ? albedo.y : albedo.z) = scene.albedo.at(c, y, x);
        (c == 0 ? tint.x : c == 1 ? tint.y : tint.z) = scene.specular_tint.at(c, y, x);
      }
      Vec3 direct, indirect, glossy, beauty;
      const Vec3 origin = p + n * kShadowBias;
      for (const auto& l : lights) {
        const Vec3 radiance = l.color * l.intensity;
        if (l.kind == LightSpec::Kind::ambient) {
          indirect = indirect + radiance;
          beauty = beauty + albedo * radiance;
          continue;
        }
        Vec3 dir;
        double atten = 1, t_max = std::numeric_limits<double>::infinity();
        if (l.kind == LightSpec::Kind::point) {
          const Vec3 to = l.vec - p;
          const double d2 = dot(to, to);
          t_max = std::sqrt(d2);
          dir = to * (1.0 / t_max);
          atten = 1.0 / d2;
        } else {
          dir = -l.vec;
        }
        const double ndl = dot(n, dir);
        if (ndl <= 0) continue;
        if (scene.desc.occluded(origin, dir, t_max)) continue;
        const Vec3 e = radiance * atten;
        const Vec3 half_vec = normalize(dir + v);
        const double spec = std::pow(std::max(dot(n, half_vec), 0.0), shine);
        direct = direct + e * ndl;
        glossy = glossy + e * spec;
        beauty = beauty + albedo * e * ndl + tint * e * spec;
      }
      for (int c = 0; c < 3; ++c) {
        P.diffuse_direct.at(c, y, x) = float(direct[c]);
        P.diffuse_indirect.at(c, y, x) = float(indirect[c]);
        P.glossy_direct.at(c, y, x) = float(glossy[c]);
        out.beauty.at(c, y, x) = float(beauty[c]);
      }
    }
  return out;
}

inline RenderPasses render_passes(const Scene& scene, std::span<const LightSpec> lights) {
  return render(scene, lights).passes;
}

struct RenderedPair {
  ImageRGB source, target;           // sRGB-encoded, clipped
  IntrinsicTriplet target_intrinsics;  // percentile-rescaled
  IntrinsicTriplet target_raw;         // HDR, before rescaling
  ImageRGB target_linear;              // pre-clip beauty
};

inline ImageRGB to_display(const ImageRGB& linear) { return linear_to_srgb(clip01(linear)); }

inline RenderedPair render_pair(const Scene& scene, std::span<const LightSpec> lights_src,
                                std::span<const LightSpec> lights_tgt) {
  require(!lights_src.empty() && !lights_tgt.empty(), "render_pair: empty light set");
  auto src = render(scene, lights_src);
  auto tgt = render(scene, lights_tgt);
  RenderedPair out;
  out.source = to_display(src.beauty);
  out.target = to_display(tgt.beauty);
  out.target_raw = passes_to_intrinsics(tgt.passes);
  out.target_intrinsics = rescale_triplet(out.target_raw);
  out.target_linear = std::move(tgt.beauty);
  return out;
}

// ---------------------------------------------------------------------------
// Text descriptions (key = value).

namespace detail {
inline std::string vec_str(const Vec3& v) {
  std::ostringstream os;
  os.precision(17);
  os << v.x << " " << v.y << " " << v.z;
  return os.str();
}
inline Vec3 get_vec(const KeyValueFile& kv, const std::string& key) {
  auto v = kv.get_doubles(key);
  require(v.size() == 3, "key '" + key + "' needs 3 numbers");
  return {v[0], v[1], v[2]};
}
inline std::string num_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

inline KeyValueFile scene_to_kv(const SceneDesc& d) {
  using detail::num_str;
  using detail::vec_str;
  static const char* prim_kinds[] = {"plane", "sphere", "box"};
  static const char* tex_kinds[] = {"solid", "checker", "stripes", "noise"};
  KeyValueFile kv;
  kv.set("height", std::to_string(d.height));
  kv.set("width", std::to_string(d.width));
  kv.set("camera.position", vec_str(d.camera.position));
  kv.set("camera.target", vec_str(d.camera.target));
  kv.set("camera.fov_deg", num_str(d.camera.fov_deg));
  kv.set("objects", std::to_string(d.primitives.size()));
  for (size_t i = 0; i < d.primitives.size(); ++i) {
    const auto& p = d.primitives[i];
    const std::string k = "object." + std::to_string(i) + ".";
    kv.set(k + "kind", prim_kinds[int(p.kind)]);
    switch (p.kind) {
      case Primitive::Kind::plane:
        kv.set(k + "point", vec_str(p.a));
        kv.set(k + "normal", vec_str(p.b));
        break;
      case Primitive::Kind::sphere:
        kv.set(k + "center", vec_str(p.a));
        kv.set(k + "radius", num_str(p.radius));
        break;
      case Primitive::Kind::box:
        kv.set(k + "min", vec_str(p.a));
        kv.set(k + "max", vec_str(p.b));
        break;
    }
    const auto& t = p.material.albedo;
    kv.set(k + "texture", tex_kinds[int(t.kind)]);
    kv.set(k + "color_a", vec_str(t.color_a));
    kv.set(k + "color_b", vec_str(t.color_b));
    kv.set(k + "texture_scale", num_str(t.scale));
    kv.set(k + "texture_seed", std::to_string(t.seed));
    kv.set(k + "specular_tint", vec_str(p.material.specular_tint));
    kv.set(k + "shininess", num_str(p.material.shininess));
  }
  return kv;
}

inline SceneDesc scene_from_kv(const KeyValueFile& kv) {
  using detail::get_vec;
  SceneDesc d;
  d.height = int(kv.get_int("height"));
  d.width = int(kv.get_int("width"));
  if (kv.has("camera.position")) d.camera.position = get_vec(kv, "camera.position");
  if (kv.has("camera.target")) d.camera.target = get_vec(kv, "camera.target");
  if (kv.has("camera.fov_deg")) d.camera.fov_deg = kv.get_double("camera.fov_deg");
  const auto n = kv.get_int("objects");
  require(n > 0, "scene needs at least one object");
  for (int64_t i = 0; i < n; ++i) {
    const std::string k = "object." + std::to_string(i) + ".";
    Primitive p;
    const auto& kind = kv.get(k + "kind");
    if (kind == "plane") {
      p.kind = Primitive::Kind::plane;
      p.a = get_vec(kv, k + "point");
      p.b = normalize(get_vec(kv, k + "normal"));
    } else if (kind == "sphere") {
      p.kind = Primitive::Kind::sphere;
      p.a = get_vec(kv, k + "center");
      p.radius = kv.get_double(k + "radius");
      require(p.radius > 0, k + "radius must be positive");
    } else if (kind == "box") {
      p.kind = Primitive::Kind::box;
      p.a = get_vec(kv, k + "min");
      p.b = get_vec(kv, k + "max");
    } else {
      throw Error("unknown object kind '" + kind + "'");
    }
    auto& t = p.material.albedo;
    const auto tex = kv.get_or(k + "texture", "solid");
    if (tex == "solid") t.kind = Texture::Kind::solid;
    else if (tex == "checker") t.kind = Texture::Kind::checker;
    else if (tex == "stripes") t.kind = Texture::Kind::stripes;
    else if (tex == "noise") t.kind = Texture::Kind::noise;
    else throw Error("unknown texture '" + tex + "'");
    t.color_a = get_vec(kv, k + "color_a");
    t.color_b = kv.has(k + "color_b") ? get_vec(kv, k + "color_b") : t.color_a;
    if (kv.has(k + "texture_scale")) t.scale = kv.get_double(k + "texture_scale");
    if (kv.has(k + "texture_seed")) t.seed = uint32_t(kv.get_int(k + "texture_seed"));
    if (kv.has(k + "specular_tint")) p.material.specular_tint = get_vec(kv, k + "specular_tint");
    if (kv.has(k + "shininess")) p.material.shininess = kv.get_double(k + "shininess");
    d.primitives.push_back(p);
  }
  return d;
}

inline KeyValueFile lights_to_kv(std::span<const LightSpec> lights) {
  using detail::num_str;
  using detail::vec_str;
  static const char* kinds[] = {"point", "directional", "ambient"};
  KeyValueFile kv;
  kv.set("lights", std::to_string(lights.size()));
  for (size_t i = 0; i < lights.size(); ++i) {
    const auto& l = lights[i];
    const std::string k = "light." + std::to_string(i) + ".";
    kv.set(k + "kind", kinds[int(l.kind)]);
    if (l.kind == LightSpec::Kind::point) kv.set(k + "position", vec_str(l.vec));
    if (l.kind == LightSpec::Kind::directional) kv.set(k + "direction", vec_str(l.vec));
    kv.set(k + "color", vec_str(l.color));
    kv.set(k + "intensity", num_str(l.intensity));
  }
  return kv;
}

inline std::vector<LightSpec> lights_from_kv(const KeyValueFile& kv) {
  using detail::get_vec;
  if (kv.has("preset")) return preset_lighting(kv.get("preset"));
  const auto n = kv.get_int("lights");
  require(n > 0, "light file needs at least one light");
  std::vector<LightSpec> out;
  for (int64_t i = 0; i < n; ++i) {
    const std::string k = "light." + std::to_string(i) + ".";
    LightSpec l;
    const auto& kind = kv.get(k + "kind");
    if (kind == "point") {
      l.kind = LightSpec::Kind::point;
      l.vec = get_vec(kv, k + "position");
    } else if (kind == "directional") {
      l.kind = LightSpec::Kind::directional;
      l.vec = normalize(get_vec(kv, k + "direction"));
    } else if (kind == "ambient") {
      l.kind = LightSpec::Kind::ambient;
    } else {
      throw Error("unknown light kind '" + kind + "'");
    }
    l.color = kv.has(k + "color") ? get_vec(kv, k + "color") : Vec3{1, 1, 1};
    l.intensity = kv.get_double(k + "intensity");
    l.validate();
    out.push_back(l);
  }
  return out;
}

}  // namespace pixl
