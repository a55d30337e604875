#pragma once

// Layer primitives: batch normalization, the three dropout flavours, dense
// layers, activations, weight initializers and the max-norm constraint.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include "agenet/autograd.hpp"
#include "agenet/conv.hpp"
#include "agenet/ops.hpp"
#include "agenet/rng.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class Activation { linear, relu, elu, selu, sigmoid, softmax };
enum class Init { he_uniform, xavier_uniform, zeros, ones };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::selu: return "selu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline const char* to_string(Init i) {
  switch (i) {
    case Init::he_uniform: return "he_uniform";
    case Init::xavier_uniform: return "xavier_uniform";
    case Init::zeros: return "zeros";
    case Init::ones: return "ones";
  }
  return "?";
}

template <typename T>
Var<T> apply_activation(Activation kind, const Var<T>& x) {
  switch (kind) {
    case Activation::linear: return x;
    case Activation::relu: return relu(x);
    case Activation::elu: return elu(x);
    case Activation::selu: return selu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::softmax: return softmax(x);
  }
  throw std::invalid_argument("unknown activation");
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.99);
  T epsilon = T(1e-3);

  explicit BatchNormState(std::size_t channels, T momentum = T(0.99), T epsilon = T(1e-3))
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}), momentum(momentum), epsilon(epsilon) {}
};

/// Normalizes over every axis except the last (channel) axis. In train mode
/// uses batch statistics and folds them into the running averages; in infer
/// mode uses the running averages. gamma * x_hat + beta in both modes.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, Mode mode) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("batch_norm on a scalar");
  const std::size_t c = xv.shape().back();
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c) {
    throw ShapeError("batch_norm: channel dim " + std::to_string(c) + " differs from state size " +
                     std::to_string(state.running_mean.size()));
  }
  const std::size_t rows = c ? xv.size() / c : 0;
  const T eps = state.epsilon;

  Tensor<T> mean(Shape{c}), var(Shape{c});
  if (mode == Mode::train) {
    if (rows == 0) throw ShapeError("batch_norm: empty batch");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xv[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<T>(rows);
    const T m = state.momentum;
    for (std::size_t j = 0; j < c; ++j) {
      state.running_mean[j] = m * state.running_mean[j] + (T{1} - m) * mean[j];
      state.running_var[j] = m * state.running_var[j] + (T{1} - m) * var[j];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor<T> inv(Shape{c});
  for (std::size_t j = 0; j < c; ++j) inv[j] = T{1} / std::sqrt(var[j] + eps);
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xv[i] - mean[j]) * inv[j];
      out[i] = gv[j] * xhat[i] + bv[j];
    }

  const bool batch_stats = mode == Mode::train;
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), rows, c, batch_stats](Tape<T>& t,
                                                                                          const Tensor<T>& g) {
        Tensor<T> sum_g(Shape{c}), sum_gx(Shape{c});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g[r * c + j];
            sum_gx[j] += g[r * c + j] * xhat[r * c + j];
          }
        if (Tensor<T>* gb = t.grad_buffer(beta))
          for (std::size_t j = 0; j < c; ++j) (*gb)[j] += sum_g[j];
        if (Tensor<T>* gg = t.grad_buffer(gamma))
          for (std::size_t j = 0; j < c; ++j) (*gg)[j] += sum_gx[j];
        if (Tensor<T>* gx = t.grad_buffer(x)) {
          const Tensor<T>& gv = gamma.value();
          const T m = static_cast<T>(rows);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t i = r * c + j;
              if (batch_stats) {
                (*gx)[i] += gv[j] * inv[j] / m * (m * g[i] - sum_g[j] - xhat[i] * sum_gx[j]);
              } else {
                (*gx)[i] += gv[j] * inv[j] * g[i];
              }
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Dropout family

namespace detail {

inline void check_rate(double rate, const char* op) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument(std::string(op) + ": rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

}  // namespace detail

/// Inverted dropout: survivors are scaled by 1/(1-rate) so E[out] = x.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Mode mode, Rng& rng) {
  detail::check_rate(rate, "dropout");
  if (mode == Mode::infer || rate == 0.0) return x;
  const T scale = T(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.storage()) m = rng.bernoulli(rate) ? T{0} : scale;
  return mul(x, x.tape()->constant(std::move(mask)));
}

/// Drops whole channels of an (N x) H x W x C map: one draw per (sample, channel).
template <typename T>
Var<T> spatial_dropout(const Var<T>& x, double rate, Mode mode, Rng& rng) {
  detail::check_rate(rate, "spatial_dropout");
  const Shape& s = x.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("spatial_dropout expects a feature map, got " + shape_str(s));
  if (mode == Mode::infer || rate == 0.0) return x;
  const std::size_t n = s.size() == 4 ? s[0] : 1;
  const std::size_t c = s.back();
  const std::size_t spatial = numel(s) / (n * c);
  const T scale = T(1.0 / (1.0 - rate));
  Tensor<T> mask(s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T keep = rng.bernoulli(rate) ? T{0} : scale;
      for (std::size_t p = 0; p < spatial; ++p) mask[(b * spatial + p) * c + ch] = keep;
    }
  return mul(x, x.tape()->constant(std::move(mask)));
}

/// Dropped units are set to the SELU negative saturation -lambda*alpha, then an
/// affine correction a*x + b restores zero mean and unit variance for
/// standard-normal inputs.
template <typename T>
Var<T> alpha_dropout(const Var<T>& x, double rate, Mode mode, Rng& rng) {
  detail::check_rate(rate, "alpha_dropout");
  if (mode == Mode::infer || rate == 0.0) return x;
  const double alpha_p = -static_cast<double>(SeluConstants<double>::lambda * SeluConstants<double>::alpha);
  const double keep = 1.0 - rate;
  const double a = 1.0 / std::sqrt(keep * (1.0 + rate * alpha_p * alpha_p));
  const double b = -a * alpha_p * rate;
  Tensor<T> scale(x.shape()), shift(x.shape());
  for (std::size_t i = 0; i < scale.size(); ++i) {
    const bool dropped = rng.bernoulli(rate);
    scale[i] = dropped ? T{0} : T(a);
    shift[i] = dropped ? T(a * alpha_p + b) : T(b);
  }
  Tape<T>& tape = *x.tape();
  return add(mul(x, tape.constant(std::move(scale))), tape.constant(std::move(shift)));
}

// ---------------------------------------------------------------------------
// Dense

/// x W + b for x of shape [n] or [N x n], W of shape [n x m].
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weights, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0] || bias.value().size() != ws[1]) {
    throw ShapeError("dense: input " + shape_str(xs) + " incompatible with weights " + shape_str(ws) + " and bias " +
                     shape_str(bias.shape()));
  }
  if (xs.size() == 1) {
    Var<T> row = reshape(x, Shape{1, xs[0]});
    return reshape(add(matmul(row, weights), bias), Shape{ws[1]});
  }
  if (xs.size() != 2) throw ShapeError("dense: flatten rank-" + std::to_string(xs.size()) + " input first");
  return add(matmul(x, weights), bias);
}

// ---------------------------------------------------------------------------
// Initialization and constraints

struct Fans {
  double fan_in;
  double fan_out;
};

/// Fan sizes for a parameter: [n x m] dense, [k x k x C] depthwise (one output
/// per channel), [k x k x Cin x Cout] conv.
inline Fans compute_fans(const Shape& shape) {
  switch (shape.size()) {
    case 0: return {1, 1};
    case 1: return {double(shape[0]), double(shape[0])};
    case 2: return {double(shape[0]), double(shape[1])};
    case 3: return {double(shape[0] * shape[1] * shape[2]), double(shape[0] * shape[1])};
    default: {
      double receptive = 1;
      for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= double(shape[i]);
      return {double(shape[shape.size() - 2]) * receptive, double(shape.back()) * receptive};
    }
  }
}

template <typename T>
Tensor<T> init_weights(Init scheme, const Shape& shape, Rng& rng) {
  switch (scheme) {
    case Init::zeros: return Tensor<T>(shape, T{0});
    case Init::ones: return Tensor<T>(shape, T{1});
    case Init::he_uniform:
    case Init::xavier_uniform: {
      const Fans f = compute_fans(shape);
      if (f.fan_in <= 0) throw std::invalid_argument("init_weights: zero fan_in for shape " + shape_str(shape));
      const double bound = scheme == Init::he_uniform ? std::sqrt(6.0 / f.fan_in)
                                                      : std::sqrt(6.0 / (f.fan_in + f.fan_out));
      Tensor<T> t(shape);
      for (auto& v : t.storage()) v = T(rng.uniform(-bound, bound));
      return t;
    }
  }
  throw std::invalid_argument("unknown initializer");
}

/// Rescales each output unit's incoming weight vector (a column of the
/// [fan x units] view; last axis = units) to L2 norm at most c. A rank-1
/// tensor is treated as a single unit.
template <typename T>
Tensor<T> apply_max_norm(Tensor<T> weights, double c) {
  if (!(c > 0)) throw std::invalid_argument("apply_max_norm: c must be positive");
  if (weights.rank() == 0) return weights;
  const std::size_t units = weights.rank() == 1 ? 1 : weights.shape().back();
  const std::size_t fan = units ? weights.size() / units : 0;
  for (std::size_t u = 0; u < units; ++u) {
    double sq = 0;
    for (std::size_t r = 0; r < fan; ++r) sq += double(weights[r * units + u]) * double(weights[r * units + u]);
    const double norm = std::sqrt(sq);
    if (norm > c) {
      const double s = c / norm;
      for (std::size_t r = 0; r < fan; ++r) weights[r * units + u] = T(double(weights[r * units + u]) * s);
    }
  }
  return weights;
}

}  // namespace agenet
