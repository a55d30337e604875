#pragma once

// First-order update rules and the step learning-rate schedule.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class OptimizerKind { sgd, sgd_momentum, adam, amsgrad, adamax, nadam };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::amsgrad: return "amsgrad";
    case OptimizerKind::adamax: return "adamax";
    case OptimizerKind::nadam: return "nadam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adam, OptimizerKind::amsgrad,
                 OptimizerKind::adamax, OptimizerKind::nadam})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimizerHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
};

/// Moment slots for one parameter. `second` holds v (adam family) or the
/// infinity norm u (adamax); `second_max` is only used by amsgrad.
template <typename T>
struct Slots {
  Tensor<T> first;
  Tensor<T> second;
  Tensor<T> second_max;
};

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, OptimizerHyper hyper = {}) : kind_(kind), hyper_(hyper) {}

  OptimizerKind kind() const noexcept { return kind_; }
  const OptimizerHyper& hyper() const noexcept { return hyper_; }
  std::size_t step_count() const noexcept { return step_; }
  const std::map<std::string, Slots<T>>& slots() const noexcept { return slots_; }

  /// One update of every parameter. Every parameter needs a gradient under the
  /// same key. Non-finite gradients abort the step before anything is mutated.
  void step(NamedTensors<T>& params, const NamedTensors<T>& grads, double lr) {
    if (!(lr > 0)) throw std::invalid_argument("optimizer step: lr must be positive");
    for (const auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) throw std::invalid_argument("optimizer step: no gradient for '" + name + "'");
      if (it->second.shape() != p.shape()) {
        throw ShapeError("optimizer step: gradient for '" + name + "' has shape " + shape_str(it->second.shape()) +
                         ", parameter has " + shape_str(p.shape()));
      }
      for (T g : it->second.storage())
        if (!std::isfinite(g)) throw NumericError("optimizer step: non-finite gradient for '" + name + "'");
    }
    ++step_;
    for (auto& [name, p] : params) update(name, p, grads.at(name), lr);
  }

 private:
  void update(const std::string& name, Tensor<T>& p, const Tensor<T>& g, double lr) {
    auto [it, fresh] = slots_.try_emplace(name);
    Slots<T>& s = it->second;
    if (fresh) {
      s.first = Tensor<T>(p.shape(), T{0});
      s.second = Tensor<T>(p.shape(), T{0});
      if (kind_ == OptimizerKind::amsgrad) s.second_max = Tensor<T>(p.shape(), T{0});
    }
    const double b1 = hyper_.beta1, b2 = hyper_.beta2, eps = hyper_.epsilon, mu = hyper_.momentum;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);

    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      double w = p[i];
      switch (kind_) {
        case OptimizerKind::sgd:
          w -= lr * gi;
          break;
        case OptimizerKind::sgd_momentum: {
          const double v = mu * s.first[i] + gi;
          s.first[i] = T(v);
          w -= lr * v;
          break;
        }
        case OptimizerKind::adam: {
          const double m = b1 * s.first[i] + (1 - b1) * gi;
          const double v = b2 * s.second[i] + (1 - b2) * gi * gi;
          s.first[i] = T(m);
          s.second[i] = T(v);
          w -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
          break;
        }
        case OptimizerKind::amsgrad: {
          const double m = b1 * s.first[i] + (1 - b1) * gi;
          const double v = b2 * s.second[i] + (1 - b2) * gi * gi;
          const double vmax = std::max<double>(s.second_max[i], v);
          s.first[i] = T(m);
          s.second[i] = T(v);
          s.second_max[i] = T(vmax);
          w -= lr * (m / bc1) / (std::sqrt(vmax) + eps);
          break;
        }
        case OptimizerKind::adamax: {
          const double m = b1 * s.first[i] + (1 - b1) * gi;
          const double u = std::max(b2 * s.second[i], std::abs(gi));
          s.first[i] = T(m);
          s.second[i] = T(u);
          w -= (lr / bc1) * m / (u + eps);
          break;
        }
        case OptimizerKind::nadam: {
          const double m = b1 * s.first[i] + (1 - b1) * gi;
          const double v = b2 * s.second[i] + (1 - b2) * gi * gi;
          s.first[i] = T(m);
          s.second[i] = T(v);
          const double m_nesterov = b1 * (m / bc1) + (1 - b1) * gi / bc1;
          w -= lr * m_nesterov / (std::sqrt(v / bc2) + eps);
          break;
        }
      }
      p[i] = T(w);
    }
  }

  OptimizerKind kind_;
  OptimizerHyper hyper_;
  std::size_t step_ = 0;
  std::map<std::string, Slots<T>> slots_;
};

/// Step decay initial * factor^floor(epoch / every), optionally followed by a
/// single halving once epoch >= halve_at_end.
struct LrSchedule {
  double initial_lr = 1e-3;
  double decay_factor = 0.6;
  std::size_t decay_every = 9;
  std::optional<std::size_t> halve_at_end;

  static LrSchedule step_decay(double initial = 1e-3, double factor = 0.6, std::size_t every = 9) {
    return LrSchedule{initial, factor, every, std::nullopt};
  }

  /// Constant rate, halved once at `epoch` (transfer-head recipe).
  static LrSchedule halving(double initial, std::optional<std::size_t> epoch) {
    return LrSchedule{initial, 1.0, 0, epoch};
  }
};

/// Rates are decimal quantities (1e-3 x 0.6^k); the binary product is rounded
/// to 15 significant digits so epoch 18 yields the double nearest 3.6e-4
/// instead of the one just below it.
inline double lr_at(const LrSchedule& s, std::size_t epoch) {
  double lr = s.initial_lr;
  if (s.decay_every > 0 && s.decay_factor != 1.0) {
    lr *= std::pow(s.decay_factor, static_cast<double>(epoch / s.decay_every));
  }
  if (s.halve_at_end && epoch >= *s.halve_at_end) lr *= 0.5;
  if (lr == 0 || !std::isfinite(lr)) return lr;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", lr);
  return std::strtod(buf, nullptr);
}

}  // namespace agenet
