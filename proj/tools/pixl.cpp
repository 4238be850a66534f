// pixl command-line tool.
//
// Exit codes: 0 success, 1 user error (bad flags, config, paths),
// 2 internal invariant violation.

#include <cblas.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pixl/augment.hpp"
#include "pixl/config.hpp"
#include "pixl/dataset.hpp"
#include "pixl/intrinsics.hpp"
#include "pixl/metrics.hpp"
#include "pixl/model.hpp"
#include "pixl/scenegen.hpp"
#include "pixl/train.hpp"

namespace fs = std::filesystem;
using namespace pixl;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  require(bool(os), "cannot write " + path.string());
  os << text;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(int scenes, int conditions, uint64_t seed, int size, const std::string& out, bool force) {
  DatasetSpec spec{scenes, conditions, seed, size, size};
  generate_dataset(spec, out, force);
  std::printf("wrote %d scenes x %d conditions (%dx%d) to %s\n", scenes, conditions, size, size, out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  const auto rc = RunConfig::load(config_path);
  const fs::path out(rc.output);
  fs::create_directories(out);
  write_text(out / "config.json", rc.to_json().dump(2) + "\n");
  const auto ds = load_dataset(rc.train.dataset, rc.train.scene_begin, rc.train.scene_count);
  Trainer tr(rc.model, rc.train, ds);
  if (!resume.empty()) tr.resume(resume);
  std::printf("model parameters: %zu, scenes: %zu, pairs: %zu\n", tr.model().params().count(), ds.scenes.size(),
              ds.pair_count());

  const auto csv_path = out / "metrics.csv";
  const bool append = !resume.empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  require(bool(csv), "cannot write " + csv_path.string());
  if (!append) csv << kMetricsHeader << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  tr.run([&](const StepMetrics& m) {
    csv << metrics_row(m) << "\n";
    const auto& c = rc.train;
    if (m.step % 50 == 0 || m.step == c.iterations) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %lld  loss %.5f  l1 %.5f  grad %.3f  lr %.3g  %.1fs\n", (long long)m.step, m.loss, m.l1,
                  m.grad_norm, m.lr, el);
      std::fflush(stdout);
    }
    if (c.eval_interval > 0 && m.step % c.eval_interval == 0) {
      const auto rep = evaluate(tr.model(), ds, {0, 0, 32});
      std::printf("eval step %lld  train-pair PSNR %.2f dB  SSIM %.4f\n", (long long)m.step, rep.mean_psnr,
                  rep.mean_ssim);
    }
    if (c.checkpoint_interval > 0 && m.step % c.checkpoint_interval == 0 && m.step != c.iterations) {
      csv.flush();
      tr.save((out / ("checkpoint_" + std::to_string(m.step) + ".pxck")).string());
    }
  });
  const auto final_path = out / "checkpoint.pxck";
  tr.save(final_path.string());
  std::printf("wrote %s\n", final_path.string().c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& csv, int first, int count) {
  const auto model = PixlModel::from_checkpoint(ad::load_checkpoint(checkpoint));
  const auto ds = load_dataset(data, first, count);
  const auto rep = evaluate(model, ds);
  const std::string csv_path = csv.empty() ? (fs::path(checkpoint).parent_path() / "eval.csv").string() : csv;
  rep.write_csv(csv_path);
  std::printf("%s", rep.summary().c_str());
  std::printf("wrote %s\n", csv_path.c_str());
  return 0;
}

int cmd_relight(const std::string& checkpoint, const std::string& source, const std::string& scene_file,
                const std::string& lights_file, const std::string& out) {
  const auto model = PixlModel::from_checkpoint(ad::load_checkpoint(checkpoint));
  const auto src = load_png(source);
  const auto desc = scene_from_kv(KeyValueFile::load(scene_file));
  require(desc.height == src.height() && desc.width == src.width(),
          "scene resolution " + std::to_string(desc.height) + "x" + std::to_string(desc.width) +
              " does not match the source image " + std::to_string(src.height()) + "x" + std::to_string(src.width()));
  const auto lights = lights_from_kv(KeyValueFile::load(lights_file));
  // Only the passes reach the model; the rendered beauty image is discarded.
  const auto passes = render_passes(build_scene(desc), lights);
  const auto cond = build_conditioning(rescale_triplet(passes_to_intrinsics(passes)));
  const auto relit = model.relight(src.pixels(), cond);
  save_png(ImageRGB(relit, ColorSpace::srgb), out);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

// Reads albedo/shading/residual PFMs (raw HDR) from a compose output
// directory, or a dataset scene directory with --condition.
ConditioningStack load_stack(const fs::path& dir, int condition) {
  const std::string s = condition < 0 ? "shading.pfm" : "cond_" + std::to_string(condition) + ".shading.pfm";
  const std::string r = condition < 0 ? "residual.pfm" : "cond_" + std::to_string(condition) + ".residual.pfm";
  IntrinsicTriplet raw{load_pfm((dir / "albedo.pfm").string()), load_pfm((dir / s).string()),
                       load_pfm((dir / r).string())};
  raw.validate();
  return build_conditioning(rescale_triplet(raw));
}

// Grid: one row per stack (original first), columns A | S | R.
ImageRGB stack_grid(const std::vector<ConditioningStack>& rows) {
  const int h = rows[0].height(), w = rows[0].width(), gap = 2;
  FloatBuffer grid(3, int(rows.size()) * (h + gap) - gap, 3 * (w + gap) - gap, 1.f);
  for (size_t r = 0; r < rows.size(); ++r)
    for (int part = 0; part < 3; ++part)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            grid.at(c, int(r) * (h + gap) + y, part * (w + gap) + x) = rows[r].data().at(part * 3 + c, y, x);
  return ImageRGB(std::move(grid), ColorSpace::srgb);
}

int cmd_augment_preview(uint64_t seed, const std::string& in, int condition, int samples, const std::string& out) {
  require(samples >= 1, "--samples must be >= 1");
  const auto stack = load_stack(in, condition);
  const AugmentConfig cfg;
  const RngStream rng(seed);
  std::vector<ConditioningStack> rows{stack};
  // Force the global gate on so every row shows a corrupted stack.
  AugmentConfig forced = cfg;
  forced.p_apply = 1.0;
  for (int i = 0; i < samples; ++i) rows.push_back(augment_conditioning(stack, forced, rng, uint64_t(i)));
  save_png(stack_grid(rows), out);
  std::printf("wrote %s (%d augmented rows)\n", out.c_str(), samples);
  return 0;
}

int cmd_compose(const std::string& passes_dir, const std::string& out) {
  const fs::path dir(passes_dir);
  RenderPasses p;
  auto bufs = p.all();
  for (size_t i = 0; i < bufs.size(); ++i) {
    const auto path = dir / (std::string(RenderPasses::names[i]) + ".pfm");
    require(fs::exists(path), "missing pass file " + path.string());
    *bufs[i] = load_pfm(path.string());
  }
  const auto raw = passes_to_intrinsics(p);
  const auto scaled = rescale_triplet(raw);
  const fs::path o(out);
  fs::create_directories(o);
  save_pfm(raw.albedo, (o / "albedo.pfm").string());
  save_pfm(raw.shading, (o / "shading.pfm").string());
  save_pfm(raw.residual, (o / "residual.pfm").string());
  save_pfm(scaled.shading, (o / "conditioning.shading.pfm").string());
  save_pfm(scaled.residual, (o / "conditioning.residual.pfm").string());
  save_png(stack_grid({build_conditioning(scaled)}), (o / "conditioning.png").string());
  std::printf("wrote triplet and conditioning to %s\n", out.c_str());
  return 0;
}

int cmd_render_passes(const std::string& scene_file, const std::string& lights_file, const std::string& out) {
  const auto desc = scene_from_kv(KeyValueFile::load(scene_file));
  const auto lights = lights_from_kv(KeyValueFile::load(lights_file));
  const auto r = render(build_scene(desc), lights);
  const fs::path o(out);
  fs::create_directories(o);
  const auto bufs = r.passes.all();
  for (size_t i = 0; i < bufs.size(); ++i)
    save_pfm(*bufs[i], (o / (std::string(RenderPasses::names[i]) + ".pfm")).string());
  save_png(to_display(r.beauty), (o / "beauty.png").string());
  std::printf("wrote %zu passes to %s\n", bufs.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixl: single-image relighting from target intrinsics"};
  app.require_subcommand(1);

  int scenes = 8, conditions = 4, size = 128;
  uint64_t seed = 0;
  std::string out;
  bool force = false;
  auto* gen = app.add_subcommand("gen-data", "Render a paired multi-illumination dataset");
  gen->add_option("--scenes", scenes, "Number of scenes")->required();
  gen->add_option("--conditions", conditions, "Lighting conditions per scene")->required();
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--size", size, "Square resolution in pixels")->capture_default_str();
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  std::string config, resume;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config, "Run configuration (JSON)")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  std::string checkpoint, data, csv;
  int first = 0, count = -1;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out scenes");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--csv", csv, "Per-pair CSV (default: eval.csv next to the checkpoint)");
  eval->add_option("--first-scene", first, "First scene index to evaluate");
  eval->add_option("--scene-count", count, "Number of scenes (default: all)");

  std::string source, scene_file, lights_file;
  auto* relight = app.add_subcommand("relight", "Relight an image under authored lights");
  relight->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  relight->add_option("--source", source, "Source image (PNG)")->required();
  relight->add_option("--scene", scene_file, "Scene description")->required();
  relight->add_option("--lights", lights_file, "Light list")->required();
  relight->add_option("--out", out, "Output PNG")->required();

  std::string in;
  int condition = -1, samples = 4;
  auto* preview = app.add_subcommand("augment-preview", "Show conditioning augmentations");
  preview->add_option("--seed", seed, "Augmentation seed")->required();
  preview->add_option("--in", in, "Directory with albedo/shading/residual PFMs")->required();
  preview->add_option("--condition", condition, "Read cond_<k>.* from a dataset scene directory");
  preview->add_option("--samples", samples, "Augmented rows")->capture_default_str();
  preview->add_option("--out", out, "Output PNG grid")->required();

  std::string passes;
  auto* compose = app.add_subcommand("compose", "Compose render passes into intrinsics");
  compose->add_option("--passes", passes, "Directory of pass PFMs")->required();
  compose->add_option("--out", out, "Output directory")->required();

  auto* passes_cmd = app.add_subcommand("render-passes", "Render the passes of a scene under a light list");
  passes_cmd->add_option("--scene", scene_file, "Scene description")->required();
  passes_cmd->add_option("--lights", lights_file, "Light list")->required();
  passes_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    openblas_set_num_threads(worker_count());
    if (*gen) return cmd_gen_data(scenes, conditions, seed, size, out, force);
    if (*train) return cmd_train(config, resume);
    if (*eval) return cmd_eval(checkpoint, data, csv, first, count);
    if (*relight) return cmd_relight(checkpoint, source, scene_file, lights_file, out);
    if (*preview) return cmd_augment_preview(seed, in, condition, samples, out);
    if (*compose) return cmd_compose(passes, out);
    if (*passes_cmd) return cmd_render_passes(scene_file, lights_file, out);
  } catch (const InvariantError& e) {
    std::cerr << "pixl: internal error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "pixl: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "pixl: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "pixl: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "pixl: internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
