#pragma once

// Differentiable tensor operations recorded on a Tape.
//
// Broadcasting is limited to two patterns: a scalar against a tensor, and a
// bias whose shape (after dropping leading size-1 axes) is a suffix of the
// other operand's shape. Both reduce to "operand index = i mod operand size".

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "agenet/autograd.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class Elementwise { add, sub, mul, div, max, exp, log, abs, neg };

namespace detail {

inline Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// Output shape of a broadcasting binary op, or ShapeError naming both shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t na = numel(a), nb = numel(b);
  if (nb == 1) return a;
  if (na == 1) return b;
  if (na == nb && strip_leading_ones(a) == strip_leading_ones(b)) return a.size() >= b.size() ? a : b;
  if (nb < na && is_suffix(strip_leading_ones(b), a)) return a;
  if (na < nb && is_suffix(strip_leading_ones(a), b)) return b;
  throw ShapeError("shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, F f, DA dfa, DB dfb) {
  Tape<T>& tape = *a.tape();
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(broadcast_shape(av.shape(), bv.shape()));
  const std::size_t na = av.size(), nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i % na], bv[i % nb]);
  return tape.record(std::move(out), {a, b}, [a, b, na, nb, dfa, dfb](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (Tensor<T>* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i % na] += g[i] * dfa(av[i % na], bv[i % nb]);
    }
    if (Tensor<T>* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % nb] += g[i] * dfb(av[i % na], bv[i % nb]);
    }
  });
}

/// dfx(x, y) with y the op's output at x.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF dfx) {
  Tape<T>& tape = *a.tape();
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  Tensor<T> saved = out;
  return tape.record(std::move(out), {a}, [a, saved = std::move(saved), dfx](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    if (Tensor<T>* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfx(av[i], saved[i]);
    }
  });
}

template <typename T>
Var<T> scalar_var(const Var<T>& like, T v) {
  return like.tape()->constant(Tensor<T>::scalar(v));
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

/// Division by an exact zero follows IEEE semantics (inf/nan), it is not clamped.
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

/// Element-wise maximum; on ties the gradient goes to the left operand.
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      a, b, [](T x, T y) { return x >= y ? x : y; }, [](T x, T y) { return x >= y ? T{1} : T{0}; },
      [](T x, T y) { return x >= y ? T{0} : T{1}; });
}

template <typename T>
Var<T> add(const Var<T>& a, T s) { return add(a, detail::scalar_var(a, s)); }
template <typename T>
Var<T> sub(const Var<T>& a, T s) { return sub(a, detail::scalar_var(a, s)); }
template <typename T>
Var<T> mul(const Var<T>& a, T s) { return mul(a, detail::scalar_var(a, s)); }
template <typename T>
Var<T> div(const Var<T>& a, T s) { return div(a, detail::scalar_var(a, s)); }
template <typename T>
Var<T> maximum(const Var<T>& a, T s) { return maximum(a, detail::scalar_var(a, s)); }

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// d|x|/dx is taken as sign(x), with 0 at the origin.
template <typename T>
Var<T> abs(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x > 0 ? T{1} : (x < 0 ? T{-1} : T{0}); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return -x; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>& b) {
  switch (kind) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::mul: return mul(a, b);
    case Elementwise::div: return div(a, b);
    case Elementwise::max: return maximum(a, b);
    default: throw std::invalid_argument("elementwise: unary kind passed with two operands");
  }
}

template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a) {
  switch (kind) {
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::abs: return abs(a);
    case Elementwise::neg: return neg(a);
    default: throw std::invalid_argument("elementwise: binary kind passed with one operand");
  }
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
struct SeluConstants {
  static constexpr T lambda = T(1.0507009873554804934193349852946);
  static constexpr T alpha = T(1.6732632423543772848170429916717);
};

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > 0 ? x : T{0}; }, [](T x, T) { return x > 0 ? T{1} : T{0}; });
}

template <typename T>
Var<T> elu(const Var<T>& a, T alpha = T{1}) {
  return detail::unary<T>(
      a, [alpha](T x) { return x > 0 ? x : alpha * std::expm1(x); },
      [alpha](T x, T y) { return x > 0 ? T{1} : y + alpha; });
}

template <typename T>
Var<T> selu(const Var<T>& a) {
  constexpr T l = SeluConstants<T>::lambda, al = SeluConstants<T>::alpha;
  return detail::unary<T>(
      a, [](T x) { return x > 0 ? l * x : l * al * std::expm1(x); },
      [](T x, T) { return x > 0 ? l : l * al * std::exp(x); });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return stable_sigmoid(x); }, [](T, T y) { return y * (T{1} - y); });
}

/// Softmax over the last axis, shifted by the row maximum.
template <typename T>
Var<T> softmax(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  if (av.rank() == 0) throw ShapeError("softmax needs at least one axis");
  const std::size_t k = av.shape().back();
  const std::size_t rows = k ? av.size() / k : 0;
  Tensor<T> out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * k;
    T* y = out.data() + r * k;
    T m = x[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, x[j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < k; ++j) y[j] /= s;
  }
  Tensor<T> saved = out;
  return a.tape()->record(std::move(out), {a}, [a, saved = std::move(saved), k, rows](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* ga = t.grad_buffer(a);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = saved.data() + r * k;
      const T* gr = g.data() + r * k;
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += gr[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) (*ga)[r * k + j] += y[j] * (gr[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

template <typename T>
Var<T> sum(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  return a.tape()->record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_buffer(a)) {
      for (auto& v : ga->storage()) v += g[0];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return mul(sum(a), T{1} / static_cast<T>(n));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

/// Collapses all axes after the first: [N, ...] -> [N, prod(...)].
template <typename T>
Var<T> flatten(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("flatten of a scalar");
  return reshape(a, Shape{s[0], numel(s) / std::max<std::size_t>(s[0], 1)});
}

// ---------------------------------------------------------------------------
// Matrix product

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

// Row-major products accumulated into C.
// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  view(C, m, n).noalias() += view(A, m, k) * view(B, k, n);
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t n, std::size_t k) {
  view(C, m, k).noalias() += view(A, m, n) * view(B, k, n).transpose();
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  view(C, k, n).noalias() += view(A, m, k).transpose() * view(B, m, n);
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(av.shape()) + " · " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out(Shape{m, n});
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_buffer(a)) detail::gemm_nt(g.data(), b.value().data(), ga->data(), m, n, k);
    if (Tensor<T>* gb = t.grad_buffer(b)) detail::gemm_tn(a.value().data(), g.data(), gb->data(), m, k, n);
  });
}

}  // namespace agenet
