#pragma once

// Training losses (differentiable, recorded on the tape) and evaluation
// metrics (plain tensors). Probabilities are floored at 1e-7 before logs.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agenet/autograd.hpp"
#include "agenet/ops.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

inline constexpr double kProbFloor = 1e-7;

/// Per-class loss multipliers, indexed by class label.
struct ClassWeights {
  std::map<int, double> weight;

  double of(int label) const {
    auto it = weight.find(label);
    if (it == weight.end()) throw std::out_of_range("no class weight for label " + std::to_string(label));
    return it->second;
  }
};

/// w_c = total / (k * count_c).
inline ClassWeights balanced_class_weights(const std::map<int, std::size_t>& counts) {
  if (counts.empty()) throw std::invalid_argument("balanced_class_weights: no classes");
  std::size_t total = 0;
  for (const auto& [label, n] : counts) {
    if (n == 0) throw std::invalid_argument("balanced_class_weights: class " + std::to_string(label) + " has no samples");
    total += n;
  }
  ClassWeights w;
  const double k = static_cast<double>(counts.size());
  for (const auto& [label, n] : counts) w.weight[label] = static_cast<double>(total) / (k * static_cast<double>(n));
  return w;
}

template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  if (pred.value().size() != target.value().size()) {
    throw ShapeError("mse: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  if (pred.value().size() == 0) throw std::invalid_argument("mse: empty input");
  Var<T> t = target.shape() == pred.shape() ? target : reshape(target, pred.shape());
  Var<T> d = sub(pred, t);
  return mean(mul(d, d));
}

/// -(1/n) sum log p[true class], probs and onehot both n x k.
template <typename T>
Var<T> categorical_cross_entropy(const Var<T>& probs, const Tensor<T>& onehot) {
  const Tensor<T>& p = probs.value();
  if (p.shape() != onehot.shape() || p.rank() != 2) {
    throw ShapeError("categorical_cross_entropy: probs " + shape_str(p.shape()) + " vs targets " +
                     shape_str(onehot.shape()));
  }
  const std::size_t n = p.dim(0), k = p.dim(1);
  if (n == 0) throw std::invalid_argument("categorical_cross_entropy: empty batch");
  std::vector<std::size_t> cls(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = onehot[r * k + j];
      if (v == T{1}) {
        ++ones;
        cls[r] = j;
      } else if (v != T{0}) {
        ones = 2;
      }
    }
    if (ones != 1) throw std::invalid_argument("categorical_cross_entropy: row " + std::to_string(r) + " is not one-hot");
  }
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) loss -= std::log(std::max(p[r * k + cls[r]], T(kProbFloor)));
  loss /= static_cast<T>(n);
  return probs.tape()->record(Tensor<T>::scalar(loss), {probs}, [probs, cls, n, k](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* gp = t.grad_buffer(probs);
    if (!gp) return;
    const Tensor<T>& p = probs.value();
    for (std::size_t r = 0; r < n; ++r) {
      const T pv = p[r * k + cls[r]];
      if (pv > T(kProbFloor)) (*gp)[r * k + cls[r]] -= g[0] / (static_cast<T>(n) * pv);
    }
  });
}

/// -(1/n) sum w_y [y log p + (1-y) log(1-p)], p clipped to [1e-7, 1-1e-7].
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& p, const Tensor<T>& y, const std::optional<ClassWeights>& weights = {}) {
  const Tensor<T>& pv = p.value();
  if (pv.size() != y.size()) throw ShapeError("binary_cross_entropy: " + shape_str(pv.shape()) + " vs " + shape_str(y.shape()));
  const std::size_t n = pv.size();
  if (n == 0) throw std::invalid_argument("binary_cross_entropy: empty batch");
  std::vector<T> w(n, T{1});
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != T{0} && y[i] != T{1}) throw std::invalid_argument("binary_cross_entropy: label outside {0,1}");
    if (weights) w[i] = static_cast<T>(weights->of(static_cast<int>(y[i])));
  }
  const T lo = T(kProbFloor), hi = T{1} - T(kProbFloor);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(pv[i], lo, hi);
    loss -= w[i] * (y[i] * std::log(q) + (T{1} - y[i]) * std::log(T{1} - q));
  }
  loss /= static_cast<T>(n);
  return p.tape()->record(Tensor<T>::scalar(loss), {p}, [p, y, w = std::move(w), n, lo, hi](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* gp = t.grad_buffer(p);
    if (!gp) return;
    const Tensor<T>& pv = p.value();
    for (std::size_t i = 0; i < n; ++i) {
      const T q = pv[i];
      if (q <= lo || q >= hi) continue;
      (*gp)[i] += g[0] * -w[i] * (y[i] / q - (T{1} - y[i]) / (T{1} - q)) / static_cast<T>(n);
    }
  });
}

// ---------------------------------------------------------------------------
// Metrics

/// (1/n) sum |y_j - yhat_j|.
template <typename T>
double mae(std::span<const T> pred, std::span<const T> truth) {
  if (pred.size() != truth.size()) throw ShapeError("mae: length mismatch");
  if (pred.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(double(truth[i]) - double(pred[i]));
  return s / static_cast<double>(pred.size());
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& truth) {
  return mae<T>(pred.values(), truth.values());
}

template <typename L>
double accuracy(std::span<const L> pred, std::span<const L> truth) {
  if (pred.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

template <typename L>
double accuracy(const std::vector<L>& pred, const std::vector<L>& truth) {
  return accuracy<L>(std::span<const L>(pred), std::span<const L>(truth));
}

/// Row-wise argmax of an n x k probability matrix (first index on ties).
template <typename T>
std::vector<int> argmax_labels(const Tensor<T>& probs) {
  if (probs.rank() != 2) throw ShapeError("argmax_labels expects n x k, got " + shape_str(probs.shape()));
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (probs[r * k + j] > probs[r * k + best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

/// Sigmoid outputs to labels: p >= 0.5 is class 1.
template <typename T>
std::vector<int> threshold_labels(const Tensor<T>& p, double threshold = 0.5) {
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = double(p[i]) >= threshold ? 1 : 0;
  return out;
}

}  // namespace agenet
