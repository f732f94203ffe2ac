#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"
#include "uasa/config.hpp"

using namespace uasa;
using namespace uasa::testing;

TEST(Config, DefaultsMatchTheMethod) {
  ExperimentConfig c;
  EXPECT_EQ(c.train.lambda_pda, 0.05);
  EXPECT_EQ(c.train.lambda_atg, 0.1);
  EXPECT_EQ(c.train.lambda_uc, 0.1);
  EXPECT_EQ(c.train.sigma, 0.05);
  EXPECT_EQ(c.train.alpha, 0.15);
  EXPECT_EQ(c.train.delta, 0.5);
  EXPECT_EQ(c.train.cluster_factor, 2.5);
  EXPECT_EQ(c.train.source_batch, 32u);
  EXPECT_EQ(c.train.target_batch, 32u);
  EXPECT_EQ(c.train.learning_rate, 1e-2);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.train.epochs, 50u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  apply_override(c, "seed=17");
  apply_override(c, "threshold_mode=fixed");
  apply_override(c, "hidden_layers=[12,8]");
  apply_override(c, "use_uc=false");
  apply_override(c, "out_dir=/tmp/somewhere");
  auto j = to_json(c);
  auto back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.synth.seed, 17u);
  EXPECT_EQ(back.train.seed, 17u);
  EXPECT_EQ(back.train.threshold_mode, ThresholdMode::fixed);
  EXPECT_EQ(back.train.hidden_layers, (std::vector<std::size_t>{12, 8}));
  EXPECT_FALSE(back.train.use_uc);
  EXPECT_EQ(back.out_dir, "/tmp/somewhere");
}

TEST(Config, EveryKeyRoundTrips) {
  ExperimentConfig c;
  auto j = to_json(c);
  EXPECT_EQ(j.size(), config_keys().size());
  for (const auto& k : config_keys()) {
    ExperimentConfig d;
    EXPECT_NO_THROW(set_config_value(d, k, j[k])) << k;
  }
}

TEST(Config, UnknownKeyListsValidKeys) {
  ExperimentConfig c;
  try {
    apply_override(c, "sigmaa=0.1");
    FAIL() << "expected an error";
  } catch (const InvalidConfig& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("sigmaa"), std::string::npos);
    for (const auto& k : config_keys()) EXPECT_NE(m.find(k), std::string::npos) << k;
  }
}

TEST(Config, TypeAndValueErrors) {
  ExperimentConfig c;
  EXPECT_THROW(apply_override(c, "epochs=-1"), InvalidConfig);
  EXPECT_THROW(apply_override(c, "sigma=abc"), InvalidConfig);
  EXPECT_THROW(apply_override(c, "threshold_mode=sometimes"), InvalidConfig);
  EXPECT_THROW(apply_override(c, "noequals"), InvalidConfig);
  EXPECT_THROW(apply_override(c, "hidden_layers=4,x"), InvalidConfig);
  apply_override(c, "hidden_layers=32,16");
  EXPECT_EQ(c.train.hidden_layers, (std::vector<std::size_t>{32, 16}));
  apply_override(c, "sigma=0");
  EXPECT_THROW(c.validate(), InvalidConfig);
  ExperimentConfig f;
  apply_override(f, "format=xml");
  EXPECT_THROW(f.validate(), InvalidConfig);
}

TEST(Config, LoadFromFile) {
  auto dir = fresh_dir("config");
  const auto path = (dir / "c.json").string();
  std::ofstream(path) << R"({"seed": 3, "epochs": 7, "imbalance": 100, "pair_loss": "ce"})";
  auto c = load_config(path);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.synth.imbalance, 100.0);
  EXPECT_EQ(c.train.pair_loss, PairLossKind::ce);
  const auto bad = (dir / "bad.json").string();
  std::ofstream(bad) << "{ not json";
  EXPECT_THROW(load_config(bad), ParseError);
  EXPECT_THROW(load_config((dir / "none.json").string()), IoError);
  const auto arr = (dir / "arr.json").string();
  std::ofstream(arr) << "[1,2]";
  EXPECT_THROW(load_config(arr), InvalidConfig);
}
