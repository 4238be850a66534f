#pragma once

// Training loop: batch assembly from sampled pairs, L1 + feature loss,
// warmup/cosine schedule, AdamW with clipping, checkpoint/resume.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pixl/ad/checkpoint.hpp"
#include "pixl/ad/ops.hpp"
#include "pixl/ad/optim.hpp"
#include "pixl/augment.hpp"
#include "pixl/dataset.hpp"
#include "pixl/model.hpp"

namespace pixl {

struct TrainConfig {
  int64_t iterations = 5000;
  int batch_size = 8;
  double peak_lr = 5e-5;
  double final_lr = 1e-5;
  int64_t warmup_steps = 250;
  double beta1 = 0.9, beta2 = 0.95;
  double weight_decay = 0.05;
  double lambda = 0.2;  // perceptual weight
  double clip_norm = 1.0;
  uint64_t seed = 0;
  AugmentConfig augment;
  std::string dataset;
  int scene_begin = 0;
  int scene_count = -1;  // all
  int64_t eval_interval = 0;
  int64_t checkpoint_interval = 0;
  int crop = 128;
  bool random_aspect = false;
  double aspect_lo = 0.33, aspect_hi = 1.0;
  double hflip_p = 0.5;

  void validate() const {
    require(iterations >= 1, "train: iterations must be >= 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(warmup_steps >= 0 && warmup_steps < iterations, "train: warmup_steps must lie in [0, iterations)");
    require(peak_lr > 0 && final_lr >= 0 && final_lr <= peak_lr, "train: need 0 <= final_lr <= peak_lr, peak_lr > 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: betas must lie in [0, 1)");
    require(weight_decay >= 0, "train: weight_decay must be >= 0");
    require(lambda >= 0, "train: lambda must be >= 0");
    require(clip_norm > 0, "train: clip_norm must be positive");
    require(crop >= 0, "train: crop must be >= 0");
    require(aspect_lo > 0 && aspect_lo <= aspect_hi && aspect_hi <= 1, "train: need 0 < aspect_lo <= aspect_hi <= 1");
    require(hflip_p >= 0 && hflip_p <= 1, "train: hflip_p must lie in [0, 1]");
    require(eval_interval >= 0 && checkpoint_interval >= 0, "train: intervals must be >= 0");
    augment.validate();
  }

  ad::AdamWConfig adamw() const { return {beta1, beta2, 1e-8, weight_decay}; }
};

/// Linear warmup from zero, then cosine decay from peak to final.
inline double lr_schedule(int64_t step, const TrainConfig& c) {
  require(step >= 0 && step <= c.iterations, "lr_schedule: step outside [0, iterations]");
  if (step < c.warmup_steps) return c.peak_lr * double(step) / double(c.warmup_steps);
  const double t = double(step - c.warmup_steps) / double(c.iterations - c.warmup_steps);
  return c.final_lr + 0.5 * (c.peak_lr - c.final_lr) * (1 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// Loss

/// Frozen, seed-initialized three-stage conv pyramid used as the feature
/// space of the perceptual term.
class FeaturePyramid {
 public:
  explicit FeaturePyramid(uint64_t seed = 0x9E37, std::array<int, 3> widths = {16, 32, 64}) {
    std::mt19937_64 g(seed);
    int in = 3;
    for (int w : widths) {
      const int fan_in = in * 9;
      std::normal_distribution<float> nd(0.f, float(std::sqrt(2.0 / fan_in)));
      std::vector<float> v(size_t(w) * fan_in);
      for (float& x : v) x = nd(g);
      weights_.push_back(ad::Tensor::from({w, in, 3, 3}, v));
      in = w;
    }
  }

  std::vector<ad::Tensor> features(const ad::Tensor& x) const {
    const ad::Conv2dOptions o{.stride = 2, .pad = 1, .pad_mode = ad::PadMode::replicate};
    std::vector<ad::Tensor> out;
    ad::Tensor h = x;
    for (const auto& w : weights_) {
      h = ad::relu(ad::conv2d(h, w, ad::Tensor(), o));
      out.push_back(h);
    }
    return out;
  }

 private:
  std::vector<ad::Tensor> weights_;
};

struct LossParts {
  ad::Tensor total, l1, perceptual;
};

/// mean|Î - I| + λ · mean over stages of mean|φ(Î) - φ(I)|.
inline LossParts compute_loss(const ad::Tensor& pred, const ad::Tensor& target, double lambda,
                              const FeaturePyramid& features) {
  require(pred.shape() == target.shape(), "loss: prediction " + ad::shape_str(pred.shape()) + " vs target " +
                                              ad::shape_str(target.shape()));
  LossParts out;
  out.l1 = ad::mean(ad::abs(ad::sub(pred, target)));
  if (lambda == 0) {
    out.perceptual = ad::Tensor::scalar(0);
    out.total = out.l1;
    return out;
  }
  std::vector<ad::Tensor> ft;
  {
    ad::NoGrad ng;
    ft = features.features(target);
  }
  const auto fp = features.features(pred);
  ad::Tensor acc;
  for (size_t i = 0; i < fp.size(); ++i) {
    auto term = ad::mean(ad::abs(ad::sub(fp[i], ft[i])));
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  out.perceptual = ad::scale(acc, ad::real(1.0 / double(fp.size())));
  out.total = ad::add(out.l1, ad::scale(out.perceptual, ad::real(lambda)));
  return out;
}

// ---------------------------------------------------------------------------
// Batches

struct SampleRef {
  std::string scene;
  int source = 0, target = 0;
  bool flipped = false;
};

struct Batch {
  ad::Tensor source, cond, target;  // [B,3,H,W], [B,9,H,W], [B,3,H,W]
  std::vector<SampleRef> refs;

  std::string describe() const {
    std::ostringstream os;
    for (size_t i = 0; i < refs.size(); ++i)
      os << (i ? ", " : "") << refs[i].scene << ":" << refs[i].source << "->" << refs[i].target
         << (refs[i].flipped ? " (flipped)" : "");
    return os.str();
  }
};

inline constexpr uint64_t kCropStream = 66;
inline constexpr uint64_t kAspectStream = 67;

/// Output size of a batch: square crops, or, with random_aspect, one side
/// shortened by a drawn aspect ratio (rounded to a multiple of `multiple`).
inline std::pair<int, int> batch_size_hw(const TrainConfig& c, const Dataset& ds, int64_t step, int multiple) {
  const int crop = c.crop == 0 ? std::min(ds.height, ds.width) : c.crop;
  require(crop <= ds.height && crop <= ds.width,
          "train: crop " + std::to_string(crop) + " exceeds the dataset resolution");
  if (!c.random_aspect) return {crop, crop};
  auto g = RngStream(c.seed).substream(uint64_t(step), kAspectStream);
  const double a = std::uniform_real_distribution<double>(c.aspect_lo, c.aspect_hi)(g);
  const int short_side = std::max(multiple, int(std::lround(crop * a / multiple)) * multiple);
  return std::bernoulli_distribution(0.5)(g) ? std::pair{short_side, crop} : std::pair{crop, short_side};
}

inline FloatBuffer crop_buffer(const FloatBuffer& b, int y0, int x0, int h, int w) {
  FloatBuffer out(b.channels(), h, w);
  for (int c = 0; c < b.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = b.at(c, y0 + y, x0 + x);
  return out;
}

/// Assembles the batch for `step` (1-based). Sample ids are
/// (step - 1) * batch_size + i, so a batch depends only on the seed and step.
inline Batch assemble_batch(const Dataset& ds, const TrainConfig& c, int64_t step, int multiple) {
  const RngStream rng(c.seed);
  const auto [h, w] = batch_size_hw(c, ds, step, multiple);
  const int crop = c.crop == 0 ? std::min(ds.height, ds.width) : c.crop;
  const int bs = c.batch_size;
  std::vector<ad::real> src(size_t(bs) * 3 * h * w), cond(size_t(bs) * 9 * h * w), tgt(src.size());
  Batch batch;
  batch.refs.resize(size_t(bs));
  parallel_for(size_t(bs), [&](size_t i) {
    const uint64_t id = uint64_t(step - 1) * uint64_t(bs) + i;
    auto s = sample_pair(ds, rng, id, c.augment);
    FloatBuffer parts[3] = {s.source_image, s.cond.data(), s.target_image};
    auto g = rng.substream(id, kCropStream);
    const int y0 = std::uniform_int_distribution<int>(0, ds.height - crop)(g);
    const int x0 = std::uniform_int_distribution<int>(0, ds.width - crop)(g);
    auto fg = rng.substream(id, kFlipStream);
    const bool flip = std::bernoulli_distribution(c.hflip_p)(fg);
    for (auto& p : parts) {
      if (crop != ds.height || crop != ds.width) p = crop_buffer(p, y0, x0, crop, crop);
      if (h != crop || w != crop) p = resize_bilinear(p, h, w);
      if (flip) p = flip_horizontal(p);
    }
    std::copy(parts[0].data().begin(), parts[0].data().end(), src.begin() + std::ptrdiff_t(i * 3 * h * w));
    std::copy(parts[1].data().begin(), parts[1].data().end(), cond.begin() + std::ptrdiff_t(i * 9 * h * w));
    std::copy(parts[2].data().begin(), parts[2].data().end(), tgt.begin() + std::ptrdiff_t(i * 3 * h * w));
    batch.refs[i] = {ds.scenes[size_t(s.scene)].id, s.source, s.target, flip};
  });
  batch.source = ad::Tensor::from({bs, 3, h, w}, std::move(src));
  batch.cond = ad::Tensor::from({bs, 9, h, w}, std::move(cond));
  batch.target = ad::Tensor::from({bs, 3, h, w}, std::move(tgt));
  return batch;
}

// ---------------------------------------------------------------------------
// Steps

struct StepMetrics {
  int64_t step = 0;
  double loss = 0, l1 = 0, perceptual = 0, grad_norm = 0, lr = 0;
};

/// Forward, loss, backward, clip, AdamW at the scheduled rate for `step`
/// (1-based), grads zeroed. A non-finite loss throws InvariantError naming
/// the batch samples.
inline StepMetrics train_step(PixlModel& model, ad::AdamW& opt, const FeaturePyramid& features,
                              const Batch& batch, const TrainConfig& c, int64_t step) {
  StepMetrics m;
  m.step = step;
  m.lr = lr_schedule(step, c);
  auto& ps = model.params();
  ps.zero_grad();
  LossParts loss;
  try {
    loss = compute_loss(model.forward(batch.source, batch.cond), batch.target, c.lambda, features);
  } catch (const InvariantError& e) {
    throw InvariantError(std::string(e.what()) + " at step " + std::to_string(step) + "; batch: " + batch.describe());
  }
  m.loss = loss.total.item();
  m.l1 = loss.l1.item();
  m.perceptual = loss.perceptual.item();
  if (!std::isfinite(m.loss))
    throw InvariantError("non-finite loss at step " + std::to_string(step) + "; batch: " + batch.describe());
  ad::backward(loss.total);
  m.grad_norm = ad::clip_grad_norm(ps, c.clip_norm);
  opt.step(m.lr);
  ps.zero_grad();
  return m;
}

inline const char* kMetricsHeader = "step,loss,l1,perceptual,grad_norm,lr";

inline std::string metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(9) << m.step << "," << m.loss << "," << m.l1 << "," << m.perceptual << ","
     << m.grad_norm << "," << m.lr;
  return os.str();
}

/// Owns model, optimizer and step counter for one run over a dataset.
class Trainer {
 public:
  Trainer(const ModelConfig& mc, const TrainConfig& tc, const Dataset& ds)
      : cfg_(tc), ds_(&ds), model_(mc, tc.seed), opt_(model_.params(), tc.adamw()) {
    cfg_.validate();
    require(!ds.scenes.empty(), "train: empty dataset");
  }

  int64_t step_count() const { return step_; }
  bool done() const { return step_ >= cfg_.iterations; }
  PixlModel& model() { return model_; }
  const PixlModel& model() const { return model_; }
  ad::AdamW& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }

  Batch batch_for(int64_t step) const { return assemble_batch(*ds_, cfg_, step, model_.config().p); }

  StepMetrics step() {
    require(!done(), "train: already at the final iteration");
    const auto batch = batch_for(step_ + 1);
    auto m = train_step(model_, opt_, features_, batch, cfg_, step_ + 1);
    ++step_;
    return m;
  }

  /// Runs to `until` (default: iterations), calling on_step after each step.
  void run(const std::function<void(const StepMetrics&)>& on_step = {}, int64_t until = -1) {
    const int64_t end = until < 0 ? cfg_.iterations : std::min(until, cfg_.iterations);
    while (step_ < end) {
      auto m = step();
      if (on_step) on_step(m);
    }
  }

  void save(const std::string& path) const {
    auto* opt = const_cast<ad::AdamW*>(&opt_);
    ad::save_checkpoint(model_.checkpoint(step_, opt), path);
  }

  void resume(const std::string& path) {
    const auto ck = ad::load_checkpoint(path);
    require(ck.step >= 0 && ck.step <= cfg_.iterations, path + ": checkpoint step outside this run");
    model_.load(ck, &opt_);
    step_ = ck.step;
  }

 private:
  TrainConfig cfg_;
  const Dataset* ds_;
  PixlModel model_;
  ad::AdamW opt_;
  FeaturePyramid features_;
  int64_t step_ = 0;
};

}  // namespace pixl
