#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pixl/imgcore.hpp"
#include "pixl/kv.hpp"

#ifndef PIXL_CLI_PATH
#error "PIXL_CLI_PATH must point at the pixl binary"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(PIXL_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pixl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // 2 scenes × 3 conditions at 16×16.
  std::string make_data(const std::string& name = "data") {
    const auto out = path(name);
    auto r = run_cli("gen-data --scenes 2 --conditions 3 --seed 4 --size 16 --out " + out);
    EXPECT_EQ(r.code, 0) << r.output;
    return out;
  }

  std::string write_config(const std::string& data, int iterations, const std::string& extra_model = "") {
    const auto cfg = path("run.json");
    std::ofstream(cfg) << R"({
  "model": {"d": 16, "L": 2, "heads": 2, "p": 4, "n_registers": 2, "readout_indices": [0, 0, 1, 1],
            "source_encoder_depth": 1, "intrinsics_encoder_depth": 1)"
                       << extra_model << R"(},
  "train": {"iterations": )" << iterations
                       << R"(, "batch_size": 2, "warmup_steps": 0, "crop": 16},
  "dataset": ")" << data << R"(",
  "output": "out"
})";
    return cfg;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenDataWritesPngsAndManifest) {
  const auto data = make_data();
  int pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(data))
    if (e.path().extension() == ".png") ++pngs;
  EXPECT_EQ(pngs, 6);
  auto kv = pixl::KeyValueFile::load(data + "/manifest.txt");
  EXPECT_EQ(kv.get_int("scenes"), 2);
  EXPECT_EQ(kv.get_int("conditions"), 3);
  auto img = pixl::load_png(data + "/scenes/00000/cond_0.png");
  EXPECT_EQ(img.height(), 16);
}

TEST_F(Cli, GenDataIsByteIdentical) {
  const auto a = make_data("a"), b = make_data("b");
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(b) / rel)) << rel;
  }
}

TEST_F(Cli, GenDataRejectsSingleCondition) {
  auto r = run_cli("gen-data --scenes 2 --conditions 1 --seed 0 --size 16 --out " + path("x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("2 conditions"), std::string::npos) << r.output;
}

TEST_F(Cli, GenDataRefusesNonEmptyDirectory) {
  const auto data = make_data();
  EXPECT_EQ(run_cli("gen-data --scenes 1 --conditions 2 --seed 0 --size 16 --out " + data).code, 1);
  EXPECT_EQ(run_cli("gen-data --scenes 1 --conditions 2 --seed 0 --size 16 --force --out " + data).code, 0);
}

TEST_F(Cli, TrainThenEval) {
  const auto data = make_data();
  auto t = run_cli("train --config " + write_config(data, 2));
  ASSERT_EQ(t.code, 0) << t.output;
  const auto ckpt = path("out/checkpoint.pxck");
  ASSERT_TRUE(fs::exists(ckpt));
  const auto metrics = slurp(path("out/metrics.csv"));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(path("out/config.json")));

  auto e = run_cli("eval --checkpoint " + ckpt + " --data " + data + " --csv " + path("eval.csv"));
  ASSERT_EQ(e.code, 0) << e.output;
  const auto csv = slurp(path("eval.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 6);  // header + ordered pairs
  EXPECT_NE(e.output.find("copy-source"), std::string::npos);

  auto one = run_cli("eval --checkpoint " + ckpt + " --data " + data + " --first-scene 1 --scene-count 1 --csv " +
                  path("one.csv"));
  ASSERT_EQ(one.code, 0) << one.output;
  const auto one_csv = slurp(path("one.csv"));
  EXPECT_EQ(std::count(one_csv.begin(), one_csv.end(), '\n'), 1 + 6);
}

TEST_F(Cli, TrainRejectsUnknownConfigKey) {
  const auto data = make_data();
  auto r = run_cli("train --config " + write_config(data, 1, R"(, "depthh": 3)"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("depthh"), std::string::npos) << r.output;
}

TEST_F(Cli, RenderComposeAndRelight) {
  const auto data = make_data();
  const auto scene = data + "/scenes/00000";
  ASSERT_EQ(run_cli("render-passes --scene " + scene + "/scene.txt --lights " + scene + "/cond_1.lights.txt --out " +
                 path("passes"))
                .code,
            0);
  auto c = run_cli("compose --passes " + path("passes") + " --out " + path("triplet"));
  ASSERT_EQ(c.code, 0) << c.output;
  for (const char* f : {"albedo.pfm", "shading.pfm", "residual.pfm", "conditioning.png"})
    EXPECT_TRUE(fs::exists(path("triplet/") + f)) << f;
  // The composed shading equals the stored one for the same lights.
  EXPECT_EQ(pixl::load_pfm(path("triplet/shading.pfm")), pixl::load_pfm(scene + "/cond_1.shading.pfm"));

  ASSERT_EQ(run_cli("train --config " + write_config(data, 1)).code, 0);
  auto r = run_cli("relight --checkpoint " + path("out/checkpoint.pxck") + " --source " + scene +
                "/cond_0.png --scene " + scene + "/scene.txt --lights " + scene + "/cond_1.lights.txt --out " +
                path("relit.png"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(pixl::load_png(path("relit.png")).width(), 16);
}

TEST_F(Cli, AugmentPreviewIsDeterministic) {
  const auto data = make_data();
  const auto scene = data + "/scenes/00001";
  for (const char* name : {"a.png", "b.png"})
    ASSERT_EQ(run_cli("augment-preview --seed 5 --in " + scene + " --condition 2 --samples 3 --out " + path(name)).code,
              0);
  EXPECT_EQ(slurp(path("a.png")), slurp(path("b.png")));
  auto grid = pixl::load_png(path("a.png"));
  EXPECT_EQ(grid.height(), 4 * 16 + 3 * 2);
  EXPECT_EQ(grid.width(), 3 * 16 + 2 * 2);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("eval --checkpoint " + path("missing.pxck") + " --data " + path("nowhere")).code, 1);
  EXPECT_EQ(run_cli("train --config " + path("missing.json")).code, 1);
}
