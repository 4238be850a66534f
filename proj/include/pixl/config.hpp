#pragma once

// Run configuration file (JSON):
//   { "model": {...}, "train": {...}, "augment": {...},
//     "dataset": "path", "output": "dir" }
// Every section is optional; missing keys keep their defaults and unknown
// keys are rejected. Relative paths resolve against the config file.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "pixl/augment.hpp"
#include "pixl/model.hpp"
#include "pixl/train.hpp"

namespace pixl {

namespace detail {

// Reads known keys of one JSON object and rejects the rest on finish().
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), where_ + " must be a JSON object");
  }

  template <typename T>
  FieldReader& get(const char* key, T& dst) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        dst = it->template get<T>();
      } catch (const nlohmann::json::exception&) {
        throw Error(where_ + "." + key + ": wrong type (" + it->dump() + ")");
      }
    }
    return *this;
  }

  FieldReader& get(const char* key, Range& dst) {
    std::array<double, 2> v{dst.lo, dst.hi};
    get(key, v);
    dst = {v[0], v[1]};
    return *this;
  }

  // Nested object handled by `fn(json, path)`.
  template <typename Fn>
  FieldReader& nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) fn(*it, where_ + "." + key);
    return *this;
  }

  void finish() const {
    for (const auto& [key, v] : j_.items())
      if (!seen_.count(key)) throw Error(where_ + ": unknown key \"" + key + "\"");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

inline nlohmann::json range_json(const Range& r) { return {r.lo, r.hi}; }

}  // namespace detail

inline nlohmann::json augment_to_json(const AugmentConfig& c) {
  using detail::range_json;
  return {{"p_apply", c.p_apply},
          {"color_cast", {{"p", c.color_cast.p}, {"scale", range_json(c.color_cast.scale)},
                          {"bias", range_json(c.color_cast.bias)}}},
          {"gamma", {{"p", c.gamma.p}, {"gamma", range_json(c.gamma.gamma)}}},
          {"holes", {{"p", c.holes.p}, {"fraction", range_json(c.holes.fraction)},
                     {"edge_bias_p", c.holes.edge_bias_p}}},
          {"edge_cracks", {{"p", c.edge_cracks.p}, {"quantile", range_json(c.edge_cracks.quantile)},
                           {"strength", range_json(c.edge_cracks.strength)}}},
          {"salt_pepper", {{"p", c.salt_pepper.p}, {"fraction", range_json(c.salt_pepper.fraction)}}},
          {"gaussian_noise", {{"p", c.gaussian_noise.p}, {"sigma", range_json(c.gaussian_noise.sigma)}}},
          {"gaussian_blur", {{"p", c.gaussian_blur.p}, {"sigma", range_json(c.gaussian_blur.sigma)}}},
          {"posterize", {{"p", c.posterize.p}, {"levels", range_json(c.posterize.levels)}}}};
}

inline AugmentConfig augment_from_json(const nlohmann::json& j, const std::string& where = "augment") {
  AugmentConfig c;
  detail::FieldReader r(j, where);
  r.get("p_apply", c.p_apply);
  r.nested("color_cast", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.color_cast.p).get("scale", c.color_cast.scale)
        .get("bias", c.color_cast.bias).finish();
  });
  r.nested("gamma", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.gamma.p).get("gamma", c.gamma.gamma).finish();
  });
  r.nested("holes", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.holes.p).get("fraction", c.holes.fraction)
        .get("edge_bias_p", c.holes.edge_bias_p).finish();
  });
  r.nested("edge_cracks", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.edge_cracks.p).get("quantile", c.edge_cracks.quantile)
        .get("strength", c.edge_cracks.strength).finish();
  });
  r.nested("salt_pepper", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.salt_pepper.p).get("fraction", c.salt_pepper.fraction).finish();
  });
  r.nested("gaussian_noise", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.gaussian_noise.p).get("sigma", c.gaussian_noise.sigma).finish();
  });
  r.nested("gaussian_blur", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.gaussian_blur.p).get("sigma", c.gaussian_blur.sigma).finish();
  });
  r.nested("posterize", [&](const auto& s, const std::string& w) {
    detail::FieldReader(s, w).get("p", c.posterize.p).get("levels", c.posterize.levels).finish();
  });
  r.finish();
  c.validate();
  return c;
}

// TrainConfig fields except augment and dataset, which live at the top level.
inline nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"final_lr", c.final_lr},
          {"warmup_steps", c.warmup_steps},
          {"betas", {c.beta1, c.beta2}},
          {"weight_decay", c.weight_decay},
          {"lambda", c.lambda},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"scene_begin", c.scene_begin},
          {"scene_count", c.scene_count},
          {"eval_interval", c.eval_interval},
          {"checkpoint_interval", c.checkpoint_interval},
          {"crop", c.crop},
          {"random_aspect", c.random_aspect},
          {"aspect_range", {c.aspect_lo, c.aspect_hi}},
          {"hflip_p", c.hflip_p}};
}

inline void train_from_json(const nlohmann::json& j, TrainConfig& c, const std::string& where = "train") {
  std::array<double, 2> betas{c.beta1, c.beta2}, aspect{c.aspect_lo, c.aspect_hi};
  detail::FieldReader(j, where)
      .get("iterations", c.iterations)
      .get("batch_size", c.batch_size)
      .get("peak_lr", c.peak_lr)
      .get("final_lr", c.final_lr)
      .get("warmup_steps", c.warmup_steps)
      .get("betas", betas)
      .get("weight_decay", c.weight_decay)
      .get("lambda", c.lambda)
      .get("clip_norm", c.clip_norm)
      .get("seed", c.seed)
      .get("scene_begin", c.scene_begin)
      .get("scene_count", c.scene_count)
      .get("eval_interval", c.eval_interval)
      .get("checkpoint_interval", c.checkpoint_interval)
      .get("crop", c.crop)
      .get("random_aspect", c.random_aspect)
      .get("aspect_range", aspect)
      .get("hflip_p", c.hflip_p)
      .finish();
  c.beta1 = betas[0];
  c.beta2 = betas[1];
  c.aspect_lo = aspect[0];
  c.aspect_hi = aspect[1];
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;  // train.augment and train.dataset are filled from the top level
  std::string output = "run";

  void validate() const {
    model.validate();
    train.validate();
    require(!train.dataset.empty(), "run config: \"dataset\" is required");
    require(!output.empty(), "run config: \"output\" must not be empty");
  }

  nlohmann::json to_json() const {
    return {{"model", model.to_json()},
            {"train", train_to_json(train)},
            {"augment", augment_to_json(train.augment)},
            {"dataset", train.dataset},
            {"output", output}};
  }

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    RunConfig rc;
    detail::FieldReader r(j, "config");
    r.nested("model", [&](const auto& s, const std::string&) { rc.model = ModelConfig::from_json(s); });
    r.nested("train", [&](const auto& s, const std::string& w) { train_from_json(s, rc.train, w); });
    r.nested("augment", [&](const auto& s, const std::string& w) { rc.train.augment = augment_from_json(s, w); });
    r.get("dataset", rc.train.dataset).get("output", rc.output);
    r.finish();
    auto resolve = [&](std::string& p) {
      if (!p.empty() && std::filesystem::path(p).is_relative() && !base.empty()) p = (base / p).lexically_normal().string();
    };
    resolve(rc.train.dataset);
    resolve(rc.output);
    rc.validate();
    return rc;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "cannot open config " + path);
    auto j = nlohmann::json::parse(is, nullptr, false, true);
    require(!j.is_discarded(), path + ": malformed JSON");
    return from_json(j, std::filesystem::path(path).parent_path());
  }
};

}  // namespace pixl
