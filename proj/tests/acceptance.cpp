// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--workdir DIR] [--only 1,4,9]
//
// Exit status is 0 only when every selected criterion passes.

#include <cblas.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "pixl/augment.hpp"
#include "pixl/dataset.hpp"
#include "pixl/intrinsics.hpp"
#include "pixl/metrics.hpp"
#include "pixl/model.hpp"
#include "pixl/scenegen.hpp"
#include "pixl/train.hpp"

namespace fs = std::filesystem;
using namespace pixl;
using ad::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_workdir = "acceptance_runs";

// ---------------------------------------------------------------------------
// 1. Identity at init

Outcome identity_at_init() {
  Stopwatch sw;
  double worst = 0;
  std::mt19937_64 g(101);
  for (int size : {64, 128}) {
    PixlModel model(ModelConfig{}, uint64_t(size));
    for (int i = 0; i < 10; ++i) {
      FloatBuffer src(3, size, size), cond(9, size, size);
      std::uniform_real_distribution<float> u(0.f, 1.f);
      for (float& v : src.data()) v = u(g);
      for (float& v : cond.data()) v = u(g);
      const auto out = model.relight(src, ConditioningStack(cond));
      for (size_t k = 0; k < src.size(); ++k)
        worst = std::max(worst, double(std::abs(out.data()[k] - src.data()[k])));
    }
  }
  const double t = sw.seconds();
  return {worst < 1e-6 && t < 30, fmt("max |out - source| = %.3g over 20 pairs at 64/128 px, %.1fs", worst, t)};
}

// ---------------------------------------------------------------------------
// 2. Formation identity

Outcome formation_identity() {
  Stopwatch sw;
  double worst = 0, worst_rel = 0;
  int conditions = 0;
  for (uint64_t s = 0; s < 25; ++s) {
    const auto scene = generate_scene(1000 + s, 48, 48);
    for (uint64_t k = 0; k < 4; ++k) {
      const auto r = render(scene, sample_lighting(mix_seed(s, k)));
      const auto composed = compose_image(passes_to_intrinsics(r.passes));
      for (size_t i = 0; i < composed.data().size(); ++i) {
        const double b = r.beauty.data()[i], d = std::abs(double(composed.data()[i]) - b);
        worst = std::max(worst, d);
        worst_rel = std::max(worst_rel, d / std::max(1.0, std::abs(b)));
      }
      ++conditions;
    }
  }
  const double t = sw.seconds();
  return {worst <= 1e-6 && t < 60,
          fmt("%d scene-conditions, max |beauty - (A*S+R)| = %.3g (relative %.3g), %.1fs", conditions, worst,
              worst_rel, t)};
}

// ---------------------------------------------------------------------------
// 3. Pass composition and percentile oracles

Outcome pass_oracles() {
  std::mt19937_64 g(303);
  double pass_diff = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + int(g() % 16), w = 1 + int(g() % 16);
    auto p = RenderPasses::zeros(h, w);
    std::uniform_real_distribution<float> u(0.f, 3.f);
    for (auto* b : p.all())
      for (float& v : b->data()) v = u(g);
    const auto t = passes_to_intrinsics(p);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          auto v = [&](const FloatBuffer& b) { return b.at(c, y, x); };
          const float a = std::min(std::max(v(p.diffuse_color), 0.f), 1.f);
          const float s = v(p.diffuse_direct) + v(p.diffuse_indirect);
          const float r = v(p.glossy_color) * (v(p.glossy_direct) + v(p.glossy_indirect)) +
                          v(p.transmission_color) * (v(p.transmission_direct) + v(p.transmission_indirect)) +
                          (v(p.volume_direct) + v(p.volume_indirect)) + v(p.emission);
          pass_diff = std::max({pass_diff, double(std::abs(t.albedo.at(c, y, x) - a)),
                                double(std::abs(t.shading.at(c, y, x) - s)),
                                double(std::abs(t.residual.at(c, y, x) - r))});
        }
  }
  double pct_diff = 0;
  int buffers = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 1 + int(g() % 64), w = 1 + int(g() % 64);
    FloatBuffer s(3, h, w), r(3, h, w);
    std::exponential_distribution<float> e(1.f + float(trial % 5));
    for (float& v : s.data()) v = e(g);
    for (float& v : r.data()) v = 0.3f * e(g);
    auto oracle = [](const FloatBuffer& b) {
      std::vector<float> v(b.data().begin(), b.data().end());
      std::sort(v.begin(), v.end());
      size_t k = 0;
      while (double(k + 1) < 0.98 * double(v.size()) - 1e-9) ++k;
      return v[k];
    };
    const float tau = std::max({oracle(s), oracle(r), 1e-4f});
    const auto out = percentile_rescale(s, r);
    pct_diff = std::max(pct_diff, double(std::abs(out.tau - tau)));
    for (size_t i = 0; i < s.size(); ++i) {
      pct_diff = std::max(pct_diff, double(std::abs(out.shading.data()[i] - std::clamp(s.data()[i], 0.f, tau) / tau)));
      pct_diff = std::max(pct_diff, double(std::abs(out.residual.data()[i] - std::clamp(r.data()[i], 0.f, tau) / tau)));
    }
    ++buffers;
  }
  return {pass_diff == 0 && pct_diff == 0,
          fmt("passes: max diff %.3g over 20 sets; percentile: max diff %.3g over %d buffers up to 64x64", pass_diff,
              pct_diff, buffers)};
}

// ---------------------------------------------------------------------------
// 4. Augmentation gate statistics

Outcome augmentation_gate() {
  Stopwatch sw;
  const AugmentConfig cfg;
  const RngStream rng(404);
  FloatBuffer base(9, 16, 16);
  std::mt19937_64 g(4);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (float& v : base.data()) v = u(g);
  const ConditioningStack stack(base);
  const int n = 10000;
  int clean = 0, applied = 0, clean_changed = 0;
  std::array<int, kNumAugs> fired{};
  for (uint64_t id = 0; id < uint64_t(n); ++id) {
    const auto plan = draw_plan(cfg, rng, id);
    const auto out = augment_conditioning(stack, cfg, rng, id);
    if (!plan.applied) {
      ++clean;
      clean_changed += out.data() != base;
      continue;
    }
    ++applied;
    for (int a = 0; a < kNumAugs; ++a) fired[size_t(a)] += plan.fired[size_t(a)];
  }
  const double probs[kNumAugs] = {cfg.color_cast.p,  cfg.gamma.p,          cfg.holes.p,         cfg.edge_cracks.p,
                                  cfg.salt_pepper.p, cfg.gaussian_noise.p, cfg.gaussian_blur.p, cfg.posterize.p};
  const double frac = double(clean) / n;
  bool ok = frac >= 0.28 && frac <= 0.32 && clean_changed == 0;
  double worst_dev = 0;
  std::string freq;
  for (int a = 0; a < kNumAugs; ++a) {
    const double f = double(fired[size_t(a)]) / applied;
    worst_dev = std::max(worst_dev, std::abs(f - probs[a]));
    freq += fmt(" %s=%.3f", aug_name(Aug(a)), f);
  }
  ok = ok && worst_dev <= 0.02;
  const double t = sw.seconds();
  ok = ok && t < 120;
  return {ok, fmt("clean %.4f (clean outputs altered: %d), worst firing deviation %.4f, %.1fs;", frac, clean_changed,
                  worst_dev, t) +
                  freq};
}

// ---------------------------------------------------------------------------
// 5. Gradient check (double-precision helper binary)

Outcome gradient_check() {
  Stopwatch sw;
  FILE* pipe = popen(PIXL_GRADCHECK_PATH " 2>&1", "r");
  if (!pipe) return {false, "cannot start " PIXL_GRADCHECK_PATH};
  std::string out;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  const double t = sw.seconds();
  std::istringstream is(out);
  std::string name, worst_name;
  double err = 0, worst = -1, max_case = 0;
  int cases = 0;
  while (is >> name >> err) {
    if (name == "worst") {
      worst = err;
      continue;
    }
    ++cases;
    if (err >= max_case) {
      max_case = err;
      worst_name = name;
    }
  }
  const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0 && worst >= 0 && worst < 1e-3 && t < 120;
  std::ofstream(g_workdir / "gradcheck.txt") << out;
  return {ok, fmt("%d cases (ops + micro model d=16 L=2 p=4 on 8x8), worst rel. err %.3g (%s), h=1e-3, %.1fs", cases,
                  worst, worst_name.c_str(), t)};
}

// ---------------------------------------------------------------------------
// Learning runs (criteria 6-8)

struct RunResult {
  EvalReport report;
  double seconds = 0;
};

RunResult train_and_eval(const ModelConfig& mc, const TrainConfig& tc, const Dataset& train, const Dataset& test,
                         const std::string& name) {
  Stopwatch sw;
  Trainer tr(mc, tc, train);
  std::ofstream log(g_workdir / (name + ".metrics.csv"));
  log << kMetricsHeader << "\n";
  tr.run([&](const StepMetrics& m) { log << metrics_row(m) << "\n"; });
  RunResult r;
  r.report = evaluate(tr.model(), test, {0, 0, -1});
  r.seconds = sw.seconds();
  r.report.write_csv((g_workdir / (name + ".eval.csv")).string());
  tr.save((g_workdir / (name + ".pxck")).string());
  return r;
}

// Memorization: 8 scenes with 2 conditions each, evaluated on its own pairs.
Outcome memorization() {
  Stopwatch sw;
  const auto ds = make_dataset({8, 2, 11, 32, 32});
  TrainConfig tc;
  tc.iterations = 2000;
  tc.batch_size = 4;
  tc.peak_lr = 1e-3;
  tc.final_lr = 1e-4;
  tc.warmup_steps = 100;
  tc.weight_decay = 0;
  tc.lambda = 0;
  tc.crop = 32;
  tc.hflip_p = 0;
  tc.augment = AugmentConfig::disabled();
  tc.seed = 1;
  const auto r = train_and_eval(ModelConfig{}, tc, ds, ds, "memorize");
  const double t = sw.seconds();
  return {r.report.mean_psnr > 35 && t < 600,
          fmt("train-pair PSNR %.2f dB (copy-source %.2f) after %lld steps on %zu pairs at 32px, %.0fs",
              r.report.mean_psnr, r.report.copy_mean_psnr, (long long)tc.iterations, r.report.pairs.size(), t)};
}

struct GeneralizationSetup {
  Dataset train, test;
  TrainConfig tc;
};

const GeneralizationSetup& generalization_setup() {
  static const GeneralizationSetup s = [] {
    GeneralizationSetup g;
    auto all = make_dataset({80, 4, 7, 64, 64});
    g.train = all;
    g.train.scenes.resize(64);
    g.test = all;
    g.test.scenes.erase(g.test.scenes.begin(), g.test.scenes.begin() + 64);
    g.tc.iterations = 3000;
    g.tc.batch_size = 4;
    g.tc.peak_lr = 5e-4;
    g.tc.final_lr = 5e-5;
    g.tc.warmup_steps = 200;
    g.tc.crop = 64;
    g.tc.seed = 1;
    return g;
  }();
  return s;
}

std::optional<RunResult> g_full_run;

const RunResult& full_run() {
  if (!g_full_run) {
    const auto& s = generalization_setup();
    g_full_run = train_and_eval(ModelConfig{}, s.tc, s.train, s.test, "full");
  }
  return *g_full_run;
}

Outcome generalization() {
  const auto& r = full_run();
  const auto& rep = r.report;
  const double dp = rep.mean_psnr - rep.copy_mean_psnr, ds = rep.mean_ssim - rep.copy_mean_ssim;
  return {dp >= 3 && ds >= 0.05 && r.seconds < 3600,
          fmt("held-out PSNR %.2f vs copy %.2f (%+.2f dB), SSIM %.3f vs %.3f (%+.3f), %zu pairs, %.0fs",
              rep.mean_psnr, rep.copy_mean_psnr, dp, rep.mean_ssim, rep.copy_mean_ssim, ds, rep.pairs.size(),
              r.seconds)};
}

Outcome ablation_ordering() {
  const auto& s = generalization_setup();
  const auto& full = full_run();
  ModelConfig direct;
  direct.head_mode = HeadMode::direct_regression;
  ModelConfig intr;
  intr.trunk_mode = TrunkMode::intrinsics_only;
  const auto d = train_and_eval(direct, s.tc, s.train, s.test, "direct");
  const auto i = train_and_eval(intr, s.tc, s.train, s.test, "intrinsics_only");
  const double f = full.report.mean_psnr, dr = d.report.mean_psnr, io = i.report.mean_psnr,
               none = full.report.copy_mean_psnr;
  return {f >= dr && dr >= none && f >= io,
          fmt("PSNR full %.2f, direct %.2f, intrinsics-only %.2f, no-improvement (copy) %.2f; runs %.0fs/%.0fs", f, dr,
              io, none, d.seconds, i.seconds)};
}

// ---------------------------------------------------------------------------
// 9. RoPE relative positions

Outcome rope_translation() {
  PixlModel model(ModelConfig{}, 909);
  ad::NoGrad ng;
  std::mt19937_64 g(909);
  const int r = model.config().n_registers, gh = 4, gw = 5;
  const auto tokens = gradcheck::random_tensor(g, {2, gh * gw, model.config().d}, -2, 2, false);
  double worst = 0;
  int compared = 0;
  for (int block = 0; block < model.config().L; ++block) {
    const auto base = model.attention_logits(tokens, gh, gw, {}, block);
    for (GridOffset off : {GridOffset{1, 0}, GridOffset{-3, 7}, GridOffset{0.5, -2.25}, GridOffset{40, 40}}) {
      const auto moved = model.attention_logits(tokens, gh, gw, off, block);
      const int batch = base.dim(0), heads = base.dim(1), len = base.dim(2);
      for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = r; i < len; ++i)
            for (int j = r; j < len; ++j) {
              const size_t k = ((size_t(b) * heads + h) * len + i) * len + j;
              worst = std::max(worst, double(std::abs(base.data()[k] - moved.data()[k])));
              ++compared;
            }
    }
  }
  return {worst < 1e-5, fmt("max patch-logit change %.3g over %d logits (4 blocks, 4 offsets)", worst, compared)};
}

// ---------------------------------------------------------------------------
// 10. Determinism

Outcome determinism() {
  setenv("PIXL_THREADS", "1", 1);
  openblas_set_num_threads(1);
  Stopwatch sw;
  const auto ds = make_dataset({4, 3, 10, 32, 32});
  TrainConfig tc;
  tc.iterations = 200;
  tc.batch_size = 2;
  tc.peak_lr = 5e-4;
  tc.final_lr = 5e-5;
  tc.warmup_steps = 20;
  tc.crop = 32;
  tc.seed = 10;
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    Trainer tr(ModelConfig{}, tc, ds);
    tr.run();
    const auto path = g_workdir / ("determinism_" + std::to_string(run) + ".pxck");
    tr.save(path.string());
    std::ifstream f(path, std::ios::binary);
    bytes[run].assign(std::istreambuf_iterator<char>(f), {});
  }
  unsetenv("PIXL_THREADS");
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  return {same, fmt("two 200-step runs, checkpoints %zu bytes each, %s, %.0fs", bytes[0].size(),
                    same ? "bit-identical" : "DIFFERENT", sw.seconds())};
}

// ---------------------------------------------------------------------------
// 11. Schedule endpoints

Outcome schedule_endpoints() {
  TrainConfig c;
  c.peak_lr = 5e-5;
  c.final_lr = 1e-5;
  c.warmup_steps = 2500;
  c.iterations = 200000;
  const double a = lr_schedule(c.warmup_steps, c), b = lr_schedule(c.iterations, c);
  const double ea = std::abs(a - 5e-5), eb = std::abs(b - 1e-5);
  return {ea <= 1e-12 && eb <= 1e-12, fmt("lr(2500) = %.15g, lr(200000) = %.15g", a, b)};
}

// ---------------------------------------------------------------------------
// 12. Inference latency through the CLI

Outcome latency() {
  const fs::path dir = g_workdir / "latency";
  fs::remove_all(dir);
  generate_dataset({1, 2, 12, 128, 128}, (dir / "data").string());
  const auto ckpt = (dir / "init.pxck").string();
  ad::save_checkpoint(PixlModel(ModelConfig{}, 12).checkpoint(0, nullptr), ckpt);
  const std::string cmd = std::string(PIXL_CLI_PATH) + " eval --checkpoint " + ckpt + " --data " +
                          (dir / "data").string() + " --csv " + (dir / "eval.csv").string() + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "cannot start " PIXL_CLI_PATH};
  std::string out;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  // The model row of the summary ends with the timed forward seconds.
  double seconds = -1;
  std::istringstream is(out);
  for (std::string line; std::getline(is, line);)
    if (line.starts_with("pixl ")) seconds = std::stod(line.substr(line.find_last_of(' ') + 1));
  const EvalOptions defaults;
  const bool protocol = defaults.warmups == 2 && defaults.timed_runs == 5;
  const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0 && protocol && seconds > 0 && seconds < 1;
  return {ok, fmt("eval forward at 128x128: %.3fs (mean of %d runs after %d warm-ups)", seconds, defaults.timed_runs,
                  defaults.warmups)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixl acceptance suite"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Directory for run artifacts")->capture_default_str();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  g_workdir = workdir;
  fs::create_directories(g_workdir);
  openblas_set_num_threads(worker_count());

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"identity at init", identity_at_init},
      {"formation identity", formation_identity},
      {"pass and percentile oracles", pass_oracles},
      {"augmentation gate statistics", augmentation_gate},
      {"gradient check", gradient_check},
      {"memorization", memorization},
      {"generalization", generalization},
      {"ablation ordering", ablation_ordering},
      {"rope translation", rope_translation},
      {"determinism", determinism},
      {"schedule endpoints", schedule_endpoints},
      {"inference latency", latency},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %-28s %s  %s\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
