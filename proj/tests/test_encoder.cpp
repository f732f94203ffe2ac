#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "support.hpp"
#include "uasa/encoder.hpp"
#include "uasa/lpb.hpp"
#include "uasa/uc.hpp"

using namespace uasa;
using namespace uasa::testing;

TEST(Forward, IdentityMode) {
  auto p = make_encoder({3}, Activation::relu);
  EXPECT_TRUE(p.identity());
  EXPECT_EQ(forward(p, std::vector<double>{1, 2, 3}), (std::vector<double>{1, 2, 3}));
}

TEST(Forward, SingleLinearIdentityLayer) {
  auto p = make_encoder({3, 3}, Activation::relu);
  for (std::size_t i = 0; i < 3; ++i) p.weights[0](i, i) = 1.0;
  std::vector<double> in{-1.5, 0.25, 4};
  EXPECT_EQ(forward(p, in), in);
}

TEST(Forward, HandComputedReluNetwork) {
  auto p = make_encoder({1, 2, 1}, Activation::relu);
  p.weights[0](0, 0) = 1;
  p.weights[0](1, 0) = -1;
  p.weights[1](0, 0) = 1;
  p.weights[1](0, 1) = 1;
  EXPECT_EQ(forward(p, std::vector<double>{2}), (std::vector<double>{2}));
}

TEST(Forward, DimensionMismatchThrows) {
  auto p = make_encoder({3, 2}, Activation::relu);
  EXPECT_THROW(forward(p, std::vector<double>{1, 2}), InvalidInput);
  EXPECT_THROW(make_encoder({}, Activation::relu), InvalidConfig);
  EXPECT_THROW(make_encoder({3, 0}, Activation::relu), InvalidConfig);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(1);
  auto p = make_encoder({5, 7, 4}, Activation::tanh);
  init_encoder(p, rng);
  std::vector<double> in{0.1, -0.2, 0.3, 0.4, -0.5};
  EXPECT_EQ(forward(p, in), forward(p, in));
}

TEST(Backward, ZeroOutputGradGivesZeroGradients) {
  std::mt19937_64 rng(2);
  auto p = make_encoder({4, 6, 3}, Activation::relu);
  init_encoder(p, rng);
  auto g = backward(p, std::vector<double>{1, -1, 0.5, 2}, std::vector<double>{0, 0, 0});
  for (auto t : g.tensors())
    for (double v : t) EXPECT_EQ(v, 0.0);
  for (double v : g.input.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, IdentityPassesGradientThrough) {
  auto p = make_encoder({3}, Activation::relu);
  auto g = backward(p, std::vector<double>{1, 2, 3}, std::vector<double>{0.5, -1, 2});
  EXPECT_EQ(std::vector<double>(g.input.flat().begin(), g.input.flat().end()), (std::vector<double>{0.5, -1, 2}));
  EXPECT_THROW(backward(p, std::vector<double>{1, 2, 3}, std::vector<double>{1}), InvalidInput);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (auto act : {Activation::tanh, Activation::relu}) {
    std::mt19937_64 rng(3);
    auto p = make_encoder({4, 5, 3}, act);
    init_encoder(p, rng);
    for (auto& b : p.biases)
      for (auto& v : b.flat()) v = 0.1;
    Matrix x = random_matrix(6, 4, rng);
    Matrix r = random_matrix(6, 3, rng);
    // L = sum_i <f(x_i), r_i>
    auto sizes = [&] {
      std::vector<double> th;
      for (auto t : p.tensors()) th.insert(th.end(), t.begin(), t.end());
      return th;
    }();
    ScalarLossFn loss = [&](std::span<const double> t, std::vector<double>* grad) {
      auto q = p;
      std::size_t k = 0;
      for (auto dst : q.tensors())
        for (auto& v : dst) v = t[k++];
      auto cache = forward_batch(q, x);
      double l = 0;
      for (std::size_t i = 0; i < x.rows(); ++i) l += dot(cache.output.row(i), r.row(i));
      if (grad) {
        auto g = backward_batch(q, cache, r);
        grad->clear();
        for (auto s : g.tensors()) grad->insert(grad->end(), s.begin(), s.end());
      }
      return l;
    };
    auto rep = grad_check(loss, sizes, 1e-4, 40);
    EXPECT_TRUE(rep.passed) << to_string(act) << " max rel " << rep.max_rel_error;
  }
}

TEST(GradCheck, QuadraticLoss) {
  std::vector<double> theta{0.3, -1.2, 2.0, 0.7};
  ScalarLossFn loss = [](std::span<const double> t, std::vector<double>* g) {
    double l = 0;
    for (double v : t) l += 0.5 * v * v;
    if (g) g->assign(t.begin(), t.end());
    return l;
  };
  auto rep = grad_check(loss, theta, 1e-8);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(rep.coordinates_checked, theta.size());
}

TEST(GradCheck, DetectsWrongGradient) {
  std::vector<double> theta{1.0, 2.0};
  ScalarLossFn loss = [](std::span<const double> t, std::vector<double>* g) {
    if (g) *g = {2 * t[0], t[1]};  // wrong in the second coordinate
    return t[0] * t[0] + t[1] * t[1];
  };
  EXPECT_FALSE(grad_check(loss, theta, 1e-4).passed);
}

TEST(GradCheck, LpbOnFiveSourceSamples) {
  std::mt19937_64 rng(4);
  Matrix x = random_unit_rows(5, 4, rng);
  auto bank = random_bank(3, 4, 0.5, rng);
  std::vector<int> y{0, 1, 2, 0, 1};
  auto rep = check_feature_loss([&](const PrototypeBank& b, const Matrix& f) { return lpb_loss(b, f, y); }, x, bank,
                                1e-4, 32);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, UcWithFrozenWeights) {
  std::mt19937_64 rng(5);
  Matrix x = random_unit_rows(6, 4, rng);
  auto bank = random_bank(3, 4, 0.5, rng);
  Matrix w(6, 6);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) w(i, j) = w(j, i) = u(rng);
  auto rep = check_feature_loss([&](const PrototypeBank& b, const Matrix& f) { return uc_loss(b, f, w); }, x, bank,
                                1e-4, 36);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Sgd, PlainGradientDescent) {
  SgdMomentum opt(0.1, 0.0);
  std::vector<double> theta{1.0}, g{2.0};
  opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
  EXPECT_DOUBLE_EQ(theta[0], 0.8);
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  SgdMomentum opt(0.5, 0.9);
  std::vector<double> theta{1.5, -2.0}, g{0.0, 0.0};
  for (int i = 0; i < 5; ++i) opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
  EXPECT_EQ(theta, (std::vector<double>{1.5, -2.0}));
}

TEST(Sgd, MomentumHandIteration) {
  SgdMomentum opt(0.01, 0.9);
  std::vector<double> theta{0.0}, g{1.0};
  opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
  EXPECT_DOUBLE_EQ(opt.velocity()[0][0], 1.0);
  EXPECT_DOUBLE_EQ(theta[0], -0.01);
  opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
  EXPECT_DOUBLE_EQ(opt.velocity()[0][0], 1.9);
  EXPECT_NEAR(theta[0], -0.029, 1e-15);
}

TEST(Sgd, MomentumZeroIsExactlyThetaMinusLrG) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  SgdMomentum opt(0.03, 0.0);
  std::vector<double> theta(7), g(7);
  for (int step = 0; step < 10; ++step) {
    for (auto& v : g) v = n(rng);
    auto expect = theta;
    for (std::size_t i = 0; i < 7; ++i) expect[i] = theta[i] - 0.03 * g[i];
    opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
    EXPECT_EQ(theta, expect);
  }
}

TEST(Sgd, ShapeMismatchAndBadRates) {
  SgdMomentum opt(0.1, 0.5);
  std::vector<double> theta{1.0, 2.0}, g{1.0};
  EXPECT_THROW(opt.step({std::span<double>(theta)}, {std::span<const double>(g)}), InvalidInput);
  EXPECT_THROW(SgdMomentum(0.0, 0.5), InvalidConfig);
  EXPECT_THROW(SgdMomentum(0.1, 1.0), InvalidConfig);
}
