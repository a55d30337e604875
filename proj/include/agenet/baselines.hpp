#pragma once

// Linear and logistic regression over flattened feature rows.

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agenet/error.hpp"
#include "agenet/losses.hpp"
#include "agenet/ops.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class LinearKind { regression, logistic };

struct LinearModel {
  std::vector<double> weights;
  double bias = 0;
  LinearKind kind = LinearKind::regression;

  /// Raw scores x.w + b for each row of an [n x d] (or [n x ...]) tensor.
  template <typename T>
  std::vector<double> decision(const Tensor<T>& x) const {
    if (x.rank() < 1) throw ShapeError("linear model: input needs a sample axis");
    const std::size_t n = x.dim(0);
    const std::size_t d = n ? x.size() / n : 0;
    if (d != weights.size()) {
      throw ShapeError("linear model: " + std::to_string(d) + " features per row, model has " + std::to_string(weights.size()));
    }
    std::vector<double> out(n, bias);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i] += double(x[i * d + j]) * weights[j];
    return out;
  }

  /// Age estimates (regression) or P(class 1) (logistic).
  template <typename T>
  std::vector<double> predict(const Tensor<T>& x) const {
    auto s = decision(x);
    if (kind == LinearKind::logistic)
      for (double& v : s) v = stable_sigmoid(v);
    return s;
  }
};

namespace detail {

template <typename T>
Eigen::MatrixXd to_matrix(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(0) == 0) throw std::invalid_argument("baseline: empty design matrix");
  const std::size_t n = x.dim(0), d = x.size() / n;
  if (d == 0) throw std::invalid_argument("baseline: zero features");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double v = x[i * d + j];
      if (!std::isfinite(v)) throw NumericError("baseline: non-finite feature at row " + std::to_string(i));
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return m;
}

inline void check_targets(std::span<const double> y, std::size_t n) {
  if (y.size() != n) throw ShapeError("baseline: " + std::to_string(y.size()) + " targets for " + std::to_string(n) + " rows");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("baseline: non-finite target");
}

}  // namespace detail

/// Least squares with an optional ridge term, solved through the normal
/// equations of the mean-centred system so the bias is not penalised.
template <typename T>
LinearModel linreg_fit(const Tensor<T>& x, std::span<const double> y, double ridge = 1e-8) {
  Eigen::MatrixXd X = detail::to_matrix(x);
  detail::check_targets(y, static_cast<std::size_t>(X.rows()));
  if (!(ridge >= 0)) throw std::invalid_argument("linreg_fit: ridge must be non-negative");
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::RowVectorXd mean_x = X.colwise().mean();
  const double mean_y = yv.mean();
  X.rowwise() -= mean_x;
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = X.transpose() * (yv.array() - mean_y).matrix();
  const Eigen::VectorXd w = gram.ldlt().solve(rhs);
  if (!w.allFinite()) throw NumericError("linreg_fit: singular system");
  LinearModel m;
  m.kind = LinearKind::regression;
  m.weights.assign(w.data(), w.data() + w.size());
  m.bias = mean_y - mean_x.dot(w);
  return m;
}

struct LogregConfig {
  double lr = 0.01;
  std::size_t epochs = 500;
  std::optional<ClassWeights> class_weights;
};

/// Full-batch gradient descent on the (optionally class-weighted) mean
/// binary cross-entropy, starting from zero weights.
template <typename T>
LinearModel logreg_fit(const Tensor<T>& x, std::span<const double> y, const LogregConfig& cfg = {},
                       std::vector<double>* loss_trace = nullptr) {
  const Eigen::MatrixXd X = detail::to_matrix(x);
  const auto n = X.rows();
  detail::check_targets(y, static_cast<std::size_t>(n));
  bool has0 = false, has1 = false;
  for (double v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("logreg_fit: labels must be 0 or 1");
    (v == 1 ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw std::invalid_argument("logreg_fit: both classes must be present");
  if (!(cfg.lr > 0)) throw std::invalid_argument("logreg_fit: lr must be positive");

  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  Eigen::VectorXd sw = Eigen::VectorXd::Ones(n);
  if (cfg.class_weights)
    for (Eigen::Index i = 0; i < n; ++i) sw(i) = cfg.class_weights->of(static_cast<int>(yv(i)));

  Eigen::VectorXd w = Eigen::VectorXd::Zero(X.cols());
  double b = 0;
  auto loss_of = [&](const Eigen::VectorXd& z) {
    double l = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + e^z) - y z, evaluated without overflow
      const double softplus = z(i) > 0 ? z(i) + std::log1p(std::exp(-z(i))) : std::log1p(std::exp(z(i)));
      l += sw(i) * (softplus - yv(i) * z(i));
    }
    return l / static_cast<double>(n);
  };
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const Eigen::VectorXd z = (X * w).array() + b;
    if (loss_trace) loss_trace->push_back(loss_of(z));
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = sw(i) * (stable_sigmoid(z(i)) - yv(i));
    w -= cfg.lr * (X.transpose() * r) / static_cast<double>(n);
    b -= cfg.lr * r.sum() / static_cast<double>(n);
  }
  if (loss_trace) loss_trace->push_back(loss_of((X * w).array() + b));
  if (!w.allFinite() || !std::isfinite(b)) throw NumericError("logreg_fit: diverged");
  LinearModel m;
  m.kind = LinearKind::logistic;
  m.weights.assign(w.data(), w.data() + w.size());
  m.bias = b;
  return m;
}

struct BaselineScore {
  LinearKind kind;
  double value;  // MAE (regression) or accuracy (logistic)
  std::size_t samples;
};

template <typename T>
BaselineScore baseline_eval(const LinearModel& m, const Tensor<T>& x, std::span<const double> y) {
  const auto p = m.predict(x);
  if (p.size() != y.size()) throw ShapeError("baseline_eval: " + std::to_string(y.size()) + " targets for " + std::to_string(p.size()) + " rows");
  if (m.kind == LinearKind::regression) {
    return {m.kind, mae<double>(std::span<const double>(p), y), p.size()};
  }
  std::vector<int> pred(p.size()), truth(y.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    pred[i] = p[i] >= 0.5 ? 1 : 0;
    truth[i] = static_cast<int>(y[i]);
  }
  return {m.kind, accuracy(pred, truth), p.size()};
}

struct BaselineRow {
  std::string method;
  double train_metric;
  double test_metric;
};

/// method,train_<metric>,test_<metric>
inline void write_baseline_report(std::ostream& os, const std::vector<BaselineRow>& rows, const std::string& metric) {
  os << "method,train_" << metric << ",test_" << metric << '\n';
  os.precision(6);
  for (const auto& r : rows) os << r.method << ',' << std::fixed << r.train_metric << ',' << r.test_metric << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace agenet
