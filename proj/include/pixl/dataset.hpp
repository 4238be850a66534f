#pragma once

// Paired multi-illumination datasets on disk and in memory.
//
// Layout written by generate_dataset:
//   manifest.txt                          key = value, lists scenes and files
//   scenes/<id>/scene.txt                 scene description (key = value)
//   scenes/<id>/albedo.pfm                shared across conditions
//   scenes/<id>/cond_<k>.png              sRGB beauty, clipped
//   scenes/<id>/cond_<k>.shading.pfm      raw HDR shading
//   scenes/<id>/cond_<k>.residual.pfm     raw HDR residual
//   scenes/<id>/cond_<k>.lights.txt       light list (key = value)

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pixl/augment.hpp"
#include "pixl/imgcore.hpp"
#include "pixl/intrinsics.hpp"
#include "pixl/kv.hpp"
#include "pixl/parallel.hpp"
#include "pixl/scenegen.hpp"

namespace pixl {

inline constexpr int kDatasetVersion = 1;

struct DatasetSpec {
  int scenes = 8;
  int conditions = 4;
  uint64_t seed = 0;
  int height = 128;
  int width = 128;

  void validate() const {
    require(scenes >= 1, "dataset needs at least one scene");
    require(conditions >= 2, "pairing requires ≥ 2 conditions");
    require(height > 0 && width > 0, "dataset resolution must be positive");
  }
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::string scene_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return buf;
}

/// One lighting condition of a scene.
struct ConditionRecord {
  FloatBuffer image;  // 3×H×W sRGB in [0,1], as stored in the PNG
  IntrinsicTriplet raw;
  ConditioningStack cond;  // percentile-rescaled [A;S;R]
};

struct SceneRecord {
  std::string id;
  std::vector<ConditionRecord> conditions;
};

struct Dataset {
  std::vector<SceneRecord> scenes;
  int height = 0, width = 0;

  size_t pair_count() const {
    size_t n = 0;
    for (const auto& s : scenes) n += s.conditions.size() * (s.conditions.size() - 1);
    return n;
  }
};

namespace detail {

inline FloatBuffer quantize_like_png(const ImageRGB& srgb) {
  FloatBuffer out = srgb.pixels();
  for (float& v : out.data()) v = float(quantize8(v)) / 255.f;
  return out;
}

inline std::string cond_prefix(const std::filesystem::path& dir, int k) {
  return (dir / ("cond_" + std::to_string(k))).string();
}

}  // namespace detail

struct GeneratedCondition {
  std::vector<LightSpec> lights;
  ImageRGB display;  // sRGB, clipped
  IntrinsicTriplet raw;
};

struct GeneratedScene {
  SceneDesc desc;
  std::vector<GeneratedCondition> conditions;
};

/// Renders scene `index` of a dataset deterministically from the spec seed.
inline GeneratedScene render_dataset_scene(const DatasetSpec& spec, int index) {
  GeneratedScene out;
  out.desc = generate_scene_desc(mix_seed(spec.seed, uint64_t(index)), spec.height, spec.width);
  const Scene scene = build_scene(out.desc);
  for (int k = 0; k < spec.conditions; ++k) {
    GeneratedCondition c;
    c.lights = sample_lighting(mix_seed(mix_seed(spec.seed, uint64_t(index)), uint64_t(k) + 1));
    auto r = render(scene, c.lights);
    c.display = to_display(r.beauty);
    c.raw = passes_to_intrinsics(r.passes);
    out.conditions.push_back(std::move(c));
  }
  return out;
}

/// Writes the dataset to `dir`. Refuses a non-empty directory unless `force`.
inline void generate_dataset(const DatasetSpec& spec, const std::string& dir, bool force = false) {
  namespace fs = std::filesystem;
  spec.validate();
  const fs::path root(dir);
  if (fs::exists(root)) {
    require(fs::is_directory(root), dir + " exists and is not a directory");
    require(force || fs::is_empty(root), dir + " is not empty (pass --force to overwrite)");
    if (force) fs::remove_all(root / "scenes");
  }
  fs::create_directories(root / "scenes");
  std::vector<std::string> ids(size_t(spec.scenes));
  parallel_for(size_t(spec.scenes), [&](size_t i) {
    const auto gen = render_dataset_scene(spec, int(i));
    ids[i] = scene_id(int(i));
    const fs::path sd = root / "scenes" / ids[i];
    fs::create_directories(sd);
    scene_to_kv(gen.desc).save((sd / "scene.txt").string());
    save_pfm(gen.conditions[0].raw.albedo, (sd / "albedo.pfm").string());
    for (int k = 0; k < spec.conditions; ++k) {
      const auto& c = gen.conditions[size_t(k)];
      const auto prefix = detail::cond_prefix(sd, k);
      save_png(c.display, prefix + ".png");
      save_pfm(c.raw.shading, prefix + ".shading.pfm");
      save_pfm(c.raw.residual, prefix + ".residual.pfm");
      lights_to_kv(c.lights).save(prefix + ".lights.txt");
    }
  });
  KeyValueFile m;
  m.set("format", "pixl-dataset");
  m.set("version", kDatasetVersion);
  m.set("seed", spec.seed);
  m.set("scenes", spec.scenes);
  m.set("conditions", spec.conditions);
  m.set("height", spec.height);
  m.set("width", spec.width);
  for (size_t i = 0; i < ids.size(); ++i) {
    const std::string key = "scene." + std::to_string(i);
    m.set(key, "scenes/" + ids[i]);
    for (int k = 0; k < spec.conditions; ++k) {
      const std::string c = "cond_" + std::to_string(k);
      m.set(key + "." + c, c + ".png " + c + ".shading.pfm " + c + ".residual.pfm");
    }
  }
  m.save((root / "manifest.txt").string());
}

inline ConditionRecord make_condition(FloatBuffer image, IntrinsicTriplet raw) {
  ConditionRecord c{std::move(image), std::move(raw), {}};
  c.cond = build_conditioning(rescale_triplet(c.raw));
  return c;
}

/// Builds the dataset in memory exactly as load_dataset would read it back.
inline Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.scenes.resize(size_t(spec.scenes));
  parallel_for(size_t(spec.scenes), [&](size_t i) {
    auto gen = render_dataset_scene(spec, int(i));
    auto& rec = ds.scenes[i];
    rec.id = scene_id(int(i));
    for (auto& c : gen.conditions)
      rec.conditions.push_back(make_condition(detail::quantize_like_png(c.display), std::move(c.raw)));
  });
  return ds;
}

inline KeyValueFile load_manifest(const std::string& dir) {
  const auto path = (std::filesystem::path(dir) / "manifest.txt").string();
  require(std::filesystem::exists(path), "no dataset manifest at " + path);
  auto m = KeyValueFile::load(path);
  require(m.get_or("format", "") == "pixl-dataset", path + ": not a dataset manifest");
  require(m.get_int("version") == kDatasetVersion, path + ": unsupported dataset version");
  return m;
}

/// Loads scenes [first, first + count) of a dataset directory (all when count < 0).
inline Dataset load_dataset(const std::string& dir, int first = 0, int count = -1) {
  namespace fs = std::filesystem;
  const auto m = load_manifest(dir);
  const int n = int(m.get_int("scenes"));
  const int k = int(m.get_int("conditions"));
  require(k >= 2, "pairing requires ≥ 2 conditions");
  require(first >= 0 && first <= n, "scene range starts past the end of the dataset");
  const int last = count < 0 ? n : std::min(n, first + count);
  Dataset ds;
  ds.height = int(m.get_int("height"));
  ds.width = int(m.get_int("width"));
  ds.scenes.resize(size_t(last - first));
  parallel_for(ds.scenes.size(), [&](size_t i) {
    auto& rec = ds.scenes[i];
    const std::string key = "scene." + std::to_string(size_t(first) + i);
    const fs::path sd = fs::path(dir) / m.get(key);
    rec.id = sd.filename().string();
    const FloatBuffer albedo = load_pfm((sd / "albedo.pfm").string());
    for (int c = 0; c < k; ++c) {
      std::istringstream files(m.get(key + ".cond_" + std::to_string(c)));
      std::string png, shading, residual;
      files >> png >> shading >> residual;
      require(!residual.empty(), key + ".cond_" + std::to_string(c) + ": expected three file names");
      auto img = load_png((sd / png).string());
      IntrinsicTriplet raw{albedo, load_pfm((sd / shading).string()), load_pfm((sd / residual).string())};
      raw.validate();
      require(img.height() == ds.height && img.width() == ds.width,
              (sd / png).string() + " does not match the manifest resolution");
      rec.conditions.push_back(make_condition(img.pixels(), std::move(raw)));
    }
  });
  require(!ds.scenes.empty(), "dataset " + dir + " selects no scenes");
  return ds;
}

// ---------------------------------------------------------------------------
// Pair sampling

struct PairSample {
  int scene = 0, source = 0, target = 0;
  FloatBuffer source_image, target_image;
  ConditioningStack cond;  // target conditioning, augmented
  bool flipped = false;
};

// Substream ids above the augmentation streams.
inline constexpr uint64_t kPairStream = 64;
inline constexpr uint64_t kFlipStream = 65;

/// Uniform scene, two distinct conditions, roles by fair coin. The target's
/// conditioning is corrupted with augment_conditioning; the images are not.
inline PairSample sample_pair(const Dataset& ds, const RngStream& rng, uint64_t sample_id,
                              const AugmentConfig& aug) {
  require(!ds.scenes.empty(), "sample_pair: empty dataset");
  auto g = rng.substream(sample_id, kPairStream);
  const int s = std::uniform_int_distribution<int>(0, int(ds.scenes.size()) - 1)(g);
  const auto& scene = ds.scenes[size_t(s)];
  const int k = int(scene.conditions.size());
  require(k >= 2, "scene " + scene.id + ": pairing requires ≥ 2 conditions");
  int a = std::uniform_int_distribution<int>(0, k - 1)(g);
  int b = std::uniform_int_distribution<int>(0, k - 2)(g);
  if (b >= a) ++b;
  if (std::bernoulli_distribution(0.5)(g)) std::swap(a, b);
  PairSample out;
  out.scene = s;
  out.source = a;
  out.target = b;
  out.source_image = scene.conditions[size_t(a)].image;
  out.target_image = scene.conditions[size_t(b)].image;
  out.cond = augment_conditioning(scene.conditions[size_t(b)].cond, aug, rng, sample_id);
  return out;
}

inline FloatBuffer flip_horizontal(const FloatBuffer& b) {
  FloatBuffer out(b.channels(), b.height(), b.width());
  for (int c = 0; c < b.channels(); ++c)
    for (int y = 0; y < b.height(); ++y)
      for (int x = 0; x < b.width(); ++x) out.at(c, y, x) = b.at(c, y, b.width() - 1 - x);
  return out;
}

}  // namespace pixl
