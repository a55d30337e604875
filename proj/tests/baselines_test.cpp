#include <gtest/gtest.h>

#include <cmath>

#include "agenet/agenet.hpp"

using namespace agenet;
using T64 = Tensor<double>;

namespace {

struct Planted {
  T64 x;
  std::vector<double> y;
  std::vector<double> w;
  double b = 0;
};

Planted planted_linear(std::size_t n, std::size_t d, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  Planted p{T64(Shape{n, d}), std::vector<double>(n), std::vector<double>(d), 3.5};
  for (auto& v : p.w) v = rng.uniform(-2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    double s = p.b;
    for (std::size_t j = 0; j < d; ++j) {
      p.x.at(i, j) = rng.normal();
      s += p.x.at(i, j) * p.w[j];
    }
    p.y[i] = s + noise_sd * rng.normal();
  }
  return p;
}

/// Labels drawn from sigmoid(x.w + b); the generator also knows the
/// Bayes-optimal decision rule sign(x.w + b).
Planted planted_logistic(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Planted p{T64(Shape{n, d}), std::vector<double>(n), std::vector<double>(d), 0.3};
  for (auto& v : p.w) v = rng.uniform(-1.5, 1.5);
  for (std::size_t i = 0; i < n; ++i) {
    double z = p.b;
    for (std::size_t j = 0; j < d; ++j) {
      p.x.at(i, j) = rng.normal();
      z += p.x.at(i, j) * p.w[j];
    }
    p.y[i] = rng.bernoulli(1 / (1 + std::exp(-z))) ? 1 : 0;
  }
  return p;
}

double bayes_accuracy(const Planted& p) {
  std::size_t hit = 0;
  const std::size_t n = p.y.size(), d = p.w.size();
  for (std::size_t i = 0; i < n; ++i) {
    double z = p.b;
    for (std::size_t j = 0; j < d; ++j) z += p.x.at(i, j) * p.w[j];
    hit += (z >= 0 ? 1.0 : 0.0) == p.y[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

TEST(Linreg, ExactLine) {
  const std::vector<double> y{2, 4, 6};
  const auto m = linreg_fit(T64::matrix({{1}, {2}, {3}}), y);
  EXPECT_NEAR(m.weights[0], 2, 1e-6);
  EXPECT_NEAR(m.bias, 0, 1e-6);
  EXPECT_EQ(baseline_eval(m, T64::matrix({{1}, {2}, {3}}), y).value, mae<double>(m.predict(T64::matrix({{1}, {2}, {3}})), y));
}

TEST(Linreg, ConstantTarget) {
  Rng rng(1);
  T64 x(Shape{30, 4});
  for (auto& v : x.storage()) v = rng.normal();
  const std::vector<double> y(30, 41.5);
  const auto m = linreg_fit(x, y);
  for (double w : m.weights) EXPECT_NEAR(w, 0, 1e-9);
  EXPECT_NEAR(m.bias, 41.5, 1e-9);
}

TEST(Linreg, RecoversPlantedWeights) {
  const auto p = planted_linear(1000, 10, 0.1, 2);  // noise variance 0.01
  const auto m = linreg_fit(p.x, p.y);
  for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(m.weights[j], p.w[j], 0.05) << j;
  EXPECT_NEAR(m.bias, p.b, 0.05);
}

TEST(Linreg, ResidualsOrthogonalToColumns) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const auto p = planted_linear(500, 12, 1.0, seed);
    const auto m = linreg_fit(p.x, p.y, 0.0);
    const auto pred = m.predict(p.x);
    for (std::size_t j = 0; j < 12; ++j) {
      double dot = 0;
      for (std::size_t i = 0; i < 500; ++i) dot += p.x.at(i, j) * (p.y[i] - pred[i]);
      EXPECT_LT(std::abs(dot), 1e-6 * 500) << "column " << j;
    }
  }
}

TEST(Linreg, Errors) {
  const std::vector<double> y{1, 2};
  EXPECT_THROW(linreg_fit(T64::matrix({{1}, {NAN}}), y), NumericError);
  EXPECT_THROW(linreg_fit(T64::matrix({{1}, {2}, {3}}), y), ShapeError);
  EXPECT_THROW(linreg_fit(T64::matrix({{1}, {2}}), std::vector<double>{1, INFINITY}), NumericError);
}

TEST(Logreg, SeparableFixtureFitsPerfectly) {
  const T64 two = T64::matrix({{-1}, {1}});
  const std::vector<double> y2{0, 1};
  EXPECT_EQ(baseline_eval(logreg_fit(two, y2), two, y2).value, 1.0);

  Rng rng(6);
  T64 x(Shape{200, 2});
  std::vector<double> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    const int cls = i % 2;
    x.at(i, 0) = (cls ? 2.0 : -2.0) + rng.uniform(-1, 1);
    x.at(i, 1) = rng.normal();
    y[i] = cls;
  }
  LogregConfig cfg;
  cfg.lr = 0.1;
  EXPECT_EQ(baseline_eval(logreg_fit(x, y, cfg), x, y).value, 1.0);
}

TEST(Logreg, LabelSwapWithNegatedInputsNegatesWeights) {
  const auto p = planted_logistic(300, 4, 7);
  T64 neg = p.x;
  for (auto& v : neg.storage()) v = -v;
  std::vector<double> flipped(p.y.size());
  for (std::size_t i = 0; i < p.y.size(); ++i) flipped[i] = 1 - p.y[i];
  const auto a = logreg_fit(p.x, p.y), b = logreg_fit(neg, flipped);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.weights[j], b.weights[j], 1e-12);
  EXPECT_NEAR(a.bias, -b.bias, 1e-12);
  EXPECT_EQ(baseline_eval(a, p.x, p.y).value, baseline_eval(b, neg, flipped).value);
}

TEST(Logreg, TestAccuracyNearBayesRate) {
  const auto train = planted_logistic(2000, 5, 8);
  auto test = planted_logistic(2000, 5, 9);
  test.w = train.w;
  test.b = train.b;
  // regenerate test labels from the training generator's rule
  Rng rng(10);
  for (std::size_t i = 0; i < 2000; ++i) {
    double z = test.b;
    for (std::size_t j = 0; j < 5; ++j) z += test.x.at(i, j) * test.w[j];
    test.y[i] = rng.bernoulli(1 / (1 + std::exp(-z))) ? 1 : 0;
  }
  LogregConfig cfg;
  cfg.lr = 0.5;
  cfg.epochs = 2000;
  const auto m = logreg_fit(train.x, train.y, cfg);
  EXPECT_NEAR(baseline_eval(m, test.x, test.y).value, bayes_accuracy(test), 0.03);
}

TEST(Logreg, LossIsMonotoneAtSmallStep) {
  const auto p = planted_logistic(400, 6, 11);
  std::vector<double> trace;
  logreg_fit(p.x, p.y, LogregConfig{}, &trace);
  ASSERT_EQ(trace.size(), 501u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]) << i;
  EXPECT_LT(trace.back(), trace.front());
}

TEST(Logreg, DeterministicAndWeighted) {
  const auto p = planted_logistic(200, 3, 12);
  const auto a = logreg_fit(p.x, p.y), b = logreg_fit(p.x, p.y);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  LogregConfig heavy;
  heavy.class_weights = ClassWeights{{{0, 1.0}, {1, 5.0}}};
  EXPECT_GT(logreg_fit(p.x, p.y, heavy).bias, a.bias);
}

TEST(Logreg, Errors) {
  EXPECT_THROW(logreg_fit(T64::matrix({{1}, {2}}), std::vector<double>{1, 1}), std::invalid_argument);
  EXPECT_THROW(logreg_fit(T64::matrix({{1}, {2}}), std::vector<double>{0, 2}), std::invalid_argument);
}

TEST(BaselineEval, PerfectAndMajority) {
  const T64 x = T64::matrix({{1}, {2}, {3}});
  LinearModel perfect{{2.0}, 1.0, LinearKind::regression};
  EXPECT_EQ(baseline_eval(perfect, x, std::vector<double>{3, 5, 7}).value, 0.0);

  // constant "always female" model on a 52/48 split
  std::vector<double> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = i < 52 ? 1 : 0;
  LinearModel majority{{0.0}, 4.0, LinearKind::logistic};
  const auto score = baseline_eval(majority, T64(Shape{100, 1}), y);
  EXPECT_NEAR(score.value, 0.52, 1e-12);
  EXPECT_EQ(score.samples, 100u);
  EXPECT_THROW(baseline_eval(perfect, x, std::vector<double>{1}), ShapeError);
}

TEST(BaselineReport, CsvLayout) {
  std::ostringstream os;
  write_baseline_report(os, {{"Linear Regression", 5.5, 6.25}}, "mae");
  EXPECT_EQ(os.str(), "method,train_mae,test_mae\nLinear Regression,5.500000,6.250000\n");
}
