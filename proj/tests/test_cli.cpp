#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sys/wait.h>

#include "support.hpp"

namespace fs = std::filesystem;
using uasa::testing::fresh_dir;

namespace {

// tiny problem so the whole file runs in a couple of seconds
const std::string kSmall = " target_size=80 max_class_size=30 epochs=2 warmup_epochs=1 hidden_layers=8 feature_dim=6";

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Run run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && UASA_OUT_DIR= '" UASA_CLI_PATH "' " + args +
                          " > stdout.txt 2> stderr.txt";
  Run r;
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "stdout.txt");
  r.err = slurp(dir / "stderr.txt");
  fs::remove(dir / "stdout.txt");
  fs::remove(dir / "stderr.txt");
  return r;
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST(Cli, GenWritesDatasetsAndManifest) {
  auto dir = fresh_dir("cli_gen");
  auto r = run_cli(dir, "gen out_dir=run seed=7" + kSmall);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::is_regular_file(dir / "run/source.bin"));
  EXPECT_TRUE(fs::is_regular_file(dir / "run/target.bin"));
  auto m = nlohmann::json::parse(slurp(dir / "run/gen.manifest.json"));
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["command"], "gen");
  EXPECT_EQ(m["outputs"].size(), 2u);
}

TEST(Cli, TrainThenEvalReportsHos) {
  auto dir = fresh_dir("cli_train");
  ASSERT_EQ(run_cli(dir, "gen out_dir=run" + kSmall).code, 0);
  auto t = run_cli(dir, "train out_dir=run" + kSmall);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("hos"), std::string::npos);
  EXPECT_EQ(lines(slurp(dir / "run/metrics.csv")), 3u);
  auto e = run_cli(dir, "eval out_dir=run" + kSmall);
  ASSERT_EQ(e.code, 0) << e.err;
  const auto csv = slurp(dir / "run/eval.csv");
  ASSERT_EQ(lines(csv), 2u);
  const auto row = csv.substr(csv.find('\n') + 1);
  const auto hos = row.substr(row.rfind(',') + 1);
  EXPECT_GT(hos.size(), 1u) << csv;
  const double v = std::stod(hos);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(Cli, CsvFormatAlsoWorks) {
  auto dir = fresh_dir("cli_csv");
  ASSERT_EQ(run_cli(dir, "gen out_dir=run format=csv" + kSmall).code, 0);
  EXPECT_TRUE(fs::is_regular_file(dir / "run/source.csv"));
  auto t = run_cli(dir, "train out_dir=run format=csv" + kSmall);
  EXPECT_EQ(t.code, 0) << t.err;
}

TEST(Cli, AblationWritesOneRowPerVariantAndSeed) {
  auto dir = fresh_dir("cli_ablate");
  auto r = run_cli(dir, "ablate loss-removal out_dir=run seeds=5" + kSmall);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "run/ablation_loss-removal.csv");
  EXPECT_EQ(lines(csv), 1u + 25u);
  for (const char* v : {"full", "w/o lpb", "w/o pda", "w/o atg", "w/o uc"}) EXPECT_NE(r.out.find(v), std::string::npos);
}

TEST(Cli, PlotAfterTraining) {
  auto dir = fresh_dir("cli_plot");
  ASSERT_EQ(run_cli(dir, "gen out_dir=run" + kSmall).code, 0);
  ASSERT_EQ(run_cli(dir, "train out_dir=run" + kSmall).code, 0);
  auto r = run_cli(dir, "plot out_dir=run" + kSmall);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"losses.svg", "hos.svg", "pca_scatter.svg"}) EXPECT_TRUE(fs::is_regular_file(dir / "run/plots" / f)) << f;
}

TEST(Cli, InvalidConfigWritesNothing) {
  auto dir = fresh_dir("cli_invalid");
  auto r = run_cli(dir, "gen out_dir=run sigma=0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("kind=invalid-config"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run"));
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator()), 0);
}

TEST(Cli, UnknownKeyListsValidKeys) {
  auto dir = fresh_dir("cli_unknown");
  auto r = run_cli(dir, "train sigmaa=0.1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sigmaa"), std::string::npos);
  for (const char* k : {"sigma", "lambda_uc", "threshold_mode", "out_dir"}) EXPECT_NE(r.err.find(k), std::string::npos) << k;
  EXPECT_EQ(lines(r.err), 1u);
}

TEST(Cli, MissingInputNamesThePath) {
  auto dir = fresh_dir("cli_missing");
  auto r = run_cli(dir, "train out_dir=nowhere");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("kind=io-error"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("nowhere/source.bin"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  auto dir = fresh_dir("cli_usage");
  EXPECT_EQ(run_cli(dir, "").code, 2);
  EXPECT_EQ(run_cli(dir, "ablate").code, 2);
  auto r = run_cli(dir, "ablate nope out_dir=run");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("loss-removal"), std::string::npos);
}

TEST(Cli, EnvironmentOverridesOutDir) {
  auto dir = fresh_dir("cli_env");
  const std::string cmd = "cd '" + dir.string() + "' && UASA_OUT_DIR=envdir '" UASA_CLI_PATH "' gen out_dir=cfgdir" +
                          kSmall + " > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::is_regular_file(dir / "envdir/source.bin"));
  EXPECT_FALSE(fs::exists(dir / "cfgdir"));
}
