#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

/// Central-difference gradient (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for each element.
template <typename T, typename F>
Tensor<T> finite_diff(F&& f, const Tensor<T>& x, T eps = T(1e-6)) {
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = static_cast<T>(f(probe));
    probe[i] = orig - eps;
    const T down = static_cast<T>(f(probe));
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff: non-finite function value at element " + std::to_string(i));
    }
    grad[i] = (up - down) / (T{2} * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|); the usual gradient-check metric.
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T scale = std::max({T{1}, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace agenet
