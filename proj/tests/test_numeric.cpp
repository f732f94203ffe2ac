#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "uasa/numeric.hpp"
#include "uasa/rng.hpp"

using namespace uasa;

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& x : p) s += (x = e(rng));
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

TEST(L2Normalize, Examples) {
  auto a = l2_normalize(std::vector<double>{3, 4});
  EXPECT_DOUBLE_EQ(a.values[0], 0.6);
  EXPECT_DOUBLE_EQ(a.values[1], 0.8);
  EXPECT_DOUBLE_EQ(a.norm, 5.0);
  auto b = l2_normalize(std::vector<double>{0, 0, 1});
  EXPECT_EQ(b.values, (std::vector<double>{0, 0, 1}));
  auto c = l2_normalize(std::vector<double>{1, 1});
  EXPECT_NEAR(c.values[0], 0.70710678, 1e-8);
  EXPECT_NEAR(c.values[1], 0.70710678, 1e-8);
}

TEST(L2Normalize, ZeroVectorIsFlaggedNotNormalized) {
  auto z = l2_normalize(std::vector<double>{0, 0, 0});
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.values, (std::vector<double>{0, 0, 0}));
  std::vector<double> v{0, 0};
  EXPECT_EQ(l2_normalize_inplace(v), 0.0);
  EXPECT_EQ(v, (std::vector<double>{0, 0}));
}

TEST(L2Normalize, UnitNormAndIdempotent) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + t % 9);
    for (auto& x : v) x = g(rng);
    auto once = l2_normalize(v);
    if (once.degenerate) continue;
    double n2 = 0;
    for (double x : once.values) n2 += x * x;
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
    auto twice = l2_normalize(once.values);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(twice.values[i], once.values[i], 1e-12);
  }
}

TEST(Softmax, Examples) {
  auto a = softmax_temperature(std::vector<double>{0, 0}, 1.0);
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  auto b = softmax_temperature(std::vector<double>{1, 0}, 1.0);
  EXPECT_NEAR(b[0], 0.7311, 1e-4);
  EXPECT_NEAR(b[1], 0.2689, 1e-4);
  auto c = softmax_temperature(std::vector<double>{1, 0}, 0.05);
  EXPECT_NEAR(c[0], 1.0, 1e-8);
  EXPECT_NEAR(c[1], 2.1e-9, 0.05e-9);  // e^-20 = 2.061e-9
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  std::vector<double> z{1, 2};
  EXPECT_THROW(softmax_temperature(z, 0.0), InvalidParameter);
  EXPECT_THROW(softmax_temperature(z, -1.0), InvalidParameter);
  EXPECT_THROW(log_softmax_temperature(z, 0.0), InvalidParameter);
}

TEST(Softmax, SimplexForWideTemperatureRange) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 30);
  for (double sigma : {1e-3, 0.05, 1.0, 37.0, 1e3})
    for (int t = 0; t < 50; ++t) {
      std::vector<double> z(2 + t % 7);
      for (auto& x : z) x = g(rng);
      auto p = softmax_temperature(z, sigma);
      double s = 0;
      for (double x : p) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_EQ(argmax_tiebreak(p), argmax_tiebreak(z));
      auto lp = log_softmax_temperature(z, sigma);
      for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_TRUE(std::isfinite(lp[i]));
        if (p[i] > 1e-300) {
          EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
        }
      }
    }
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(std::vector<double>{1, 0, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.98, 0.01, 0.01}), 0.1119, 1e-3);
}

TEST(Entropy, BoundedAndPermutationInvariant) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 2 + t % 8;
    auto p = random_simplex(rng, k);
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);
    auto q = p;
    std::shuffle(q.begin(), q.end(), rng);
    EXPECT_NEAR(entropy(q), h, 1e-12);
  }
  for (std::size_t k = 2; k < 10; ++k) {
    std::vector<double> u(k, 1.0 / static_cast<double>(k));
    EXPECT_NEAR(entropy(u), std::log(static_cast<double>(k)), 1e-9);
  }
}

TEST(SymmetricKl, Examples) {
  EXPECT_EQ(symmetric_kl(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}), 0.0);
  // 0.5 * [(0.5-0.9) ln(0.5/0.9) + (0.5-0.1) ln(0.5/0.1)]
  const double oracle = 0.5 * ((0.5 - 0.9) * std::log(0.5 / 0.9) + (0.5 - 0.1) * std::log(0.5 / 0.1));
  EXPECT_NEAR(oracle, 0.4394, 1e-3);
  EXPECT_NEAR(symmetric_kl(std::vector<double>{0.5, 0.5}, std::vector<double>{0.9, 0.1}), oracle, 1e-12);
  EXPECT_THROW(symmetric_kl(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), InvalidInput);
}

TEST(SymmetricKl, NonNegativeSymmetricZeroOnlyWhenEqual) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 2 + t % 6;
    auto p = random_simplex(rng, k);
    auto q = random_simplex(rng, k);
    const double a = symmetric_kl(p, q);
    EXPECT_GE(a, 0.0);
    EXPECT_DOUBLE_EQ(a, symmetric_kl(q, p));
    EXPECT_GT(a, 0.0);
    EXPECT_EQ(symmetric_kl(p, p), 0.0);
  }
  // Zero entries are clamped, so the value stays finite.
  EXPECT_TRUE(std::isfinite(symmetric_kl(std::vector<double>{1, 0}, std::vector<double>{0, 1})));
}

TEST(Cosine, Examples) {
  std::vector<double> v{0.3, -2, 5};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 0.70710678, 1e-8);
  EXPECT_THROW(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), InvalidInput);
}

TEST(Cosine, StaysInRange) {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> u(4), v(4);
    for (auto& x : u) x = g(rng);
    for (std::size_t i = 0; i < 4; ++i) v[i] = t % 2 ? u[i] * 3.0 : -u[i];
    const double c = cosine_similarity(u, v);
    EXPECT_LE(c, 1.0);
    EXPECT_GE(c, -1.0);
  }
}

TEST(Argmax, TieBreakToSmallestIndex) {
  EXPECT_EQ(argmax_tiebreak(std::vector<double>{0.2, 0.9, 0.1}), 1u);
  EXPECT_EQ(argmax_tiebreak(std::vector<double>{0.5, 0.5}), 0u);
  EXPECT_EQ(argmax_tiebreak(std::vector<double>{-1, -1, -0.5}), 2u);
  EXPECT_THROW(argmax_tiebreak(std::vector<double>{}), InvalidInput);
}

TEST(Rng, NamedStreamsAreIndependentAndStable) {
  EXPECT_EQ(derive_seed(7, "data"), derive_seed(7, "data"));
  EXPECT_NE(derive_seed(7, "data"), derive_seed(7, "init"));
  EXPECT_NE(derive_seed(7, "kmeans", 1), derive_seed(7, "kmeans", 2));
  EXPECT_NE(derive_seed(7, "data"), derive_seed(8, "data"));
  auto a = make_rng(3, "shuffle");
  auto b = make_rng(3, "shuffle");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}
