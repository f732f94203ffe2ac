#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support.hpp"
#include "uasa/eval.hpp"

using namespace uasa;

using namespace uasa::testing;

TEST(Hos, Examples) {
  EXPECT_NEAR(harmonic_os_unk(0.8, 0.6), 0.6857, 1e-4);
  for (double x : {0.0, 0.1, 0.5, 0.77, 1.0}) EXPECT_NEAR(harmonic_os_unk(x, x), x, 1e-15);
  EXPECT_EQ(harmonic_os_unk(0.0, 0.0), 0.0);
}

TEST(Evaluate, PerfectDecisions) {
  std::vector<TargetDecision> d(4);
  d[0].verdict = Verdict::id;
  d[0].predicted_class = 0;
  d[1].verdict = Verdict::id;
  d[1].predicted_class = 1;
  std::vector<int> gt{0, 1, 2, 3};
  auto m = evaluate(d, gt, 2);
  EXPECT_EQ(m.os_star, 1.0);
  EXPECT_EQ(m.unk, 1.0);
  EXPECT_EQ(m.hos, 1.0);
  std::size_t total = 0;
  for (auto& r : m.confusion)
    for (auto v : r) total += v;
  EXPECT_EQ(total, 4u);
}

TEST(Evaluate, NoOodGroundTruthFlagsUnkUndefined) {
  std::vector<TargetDecision> d(2);
  d[0].verdict = Verdict::id;
  std::vector<int> gt{0, 1};
  auto m = evaluate(d, gt, 2);
  EXPECT_FALSE(m.unk_defined);
  EXPECT_EQ(m.hos, 0.0);
  EXPECT_DOUBLE_EQ(m.os_star, 0.5);
}

TEST(Evaluate, InputErrors) {
  std::vector<TargetDecision> d(2);
  EXPECT_THROW(evaluate(d, std::vector<int>{0}, 2), InvalidInput);
  EXPECT_THROW(evaluate(d, std::vector<int>{0, -1}, 2), InvalidInput);
}

TEST(Evaluate, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto in = random_eval_instance(rng, 1 + rng() % 1000, 2 + rng() % 6, t % 10 == 0 ? 0 : 1 + rng() % 3);
    auto m = evaluate(in.decisions, in.truth, in.k);
    auto o = oracle_evaluate(in);
    EXPECT_DOUBLE_EQ(m.os_star, o.os_star);
    EXPECT_DOUBLE_EQ(m.unk, o.unk);
    EXPECT_DOUBLE_EQ(m.hos, o.hos);
    EXPECT_EQ(m.unk_defined, o.unk_defined);
    std::size_t total = 0;
    for (auto& r : m.confusion)
      for (auto v : r) total += v;
    EXPECT_EQ(total, in.truth.size());
  }
}

TEST(Evaluate, BoundsAndPermutationInvariance) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    auto in = random_eval_instance(rng, 50 + rng() % 200, 4, 2);
    auto m = evaluate(in.decisions, in.truth, in.k);
    EXPECT_LE(m.hos, 2 * std::min(m.os_star, m.unk) + 1e-15);
    EXPECT_LE(m.hos, std::max(m.os_star, m.unk) + 1e-15);
    std::vector<std::size_t> perm(in.truth.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    EvalInstance p;
    p.k = in.k;
    for (auto i : perm) {
      p.decisions.push_back(in.decisions[i]);
      p.truth.push_back(in.truth[i]);
    }
    auto mp = evaluate(p.decisions, p.truth, p.k);
    EXPECT_EQ(mp.confusion, m.confusion);
    EXPECT_NEAR(mp.os_star, m.os_star, 1e-15);
    EXPECT_NEAR(mp.unk, m.unk, 1e-15);
    EXPECT_NEAR(mp.hos, m.hos, 1e-15);
  }
}
