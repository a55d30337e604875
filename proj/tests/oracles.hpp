#pragma once

// Reference implementations written directly from the textbook definitions
// with plain loops and scalars. Nothing here calls into the library's
// kernels, so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace oracle {

/// Row-major dense array with explicit dims; deliberately not agenet::Tensor.
struct Array {
  std::vector<std::size_t> dims;
  std::vector<double> v;
};

inline double& at4(Array& a, std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  return a.v[((i * a.dims[1] + j) * a.dims[2] + k) * a.dims[3] + l];
}
inline double at4(const Array& a, std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  return a.v[((i * a.dims[1] + j) * a.dims[2] + k) * a.dims[3] + l];
}

inline Array zeros(std::vector<std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return {std::move(dims), std::vector<double>(n, 0.0)};
}

/// C[i][j] = sum_p A[i][p] B[p][j].
inline Array matmul(const Array& a, const Array& b) {
  const std::size_t m = a.dims[0], k = a.dims[1], n = b.dims[1];
  Array c = zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a.v[i * k + p] * b.v[p * n + j];
      c.v[i * n + j] = s;
    }
  return c;
}

/// Leading pad of "same" padding at stride 1: (k-1)/2, extra pad goes after.
inline std::ptrdiff_t same_pad(std::size_t k) { return static_cast<std::ptrdiff_t>((k - 1) / 2); }

/// x: N x H x W x C, w: k x k x C x F, b: F. Stride 1; same or valid padding.
inline Array conv2d(const Array& x, const Array& w, const std::vector<double>& b, bool same) {
  const std::size_t N = x.dims[0], H = x.dims[1], W = x.dims[2], C = x.dims[3];
  const std::size_t k = w.dims[0], F = w.dims[3];
  const std::size_t OH = same ? H : H - k + 1, OW = same ? W : W - k + 1;
  const std::ptrdiff_t pad = same ? same_pad(k) : 0;
  Array y = zeros({N, OH, OW, F});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        for (std::size_t f = 0; f < F; ++f) {
          double s = b[f];
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              for (std::size_t c = 0; c < C; ++c)
                s += at4(x, n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c) * at4(w, ky, kx, c, f);
            }
          at4(y, n, oy, ox, f) = s;
        }
  return y;
}

/// Depthwise k x k per channel (dw: k x k x C), then 1 x 1 mix (pw: C x F) plus bias.
inline Array separable_conv2d(const Array& x, const Array& dw, const Array& pw, const std::vector<double>& b) {
  const std::size_t N = x.dims[0], H = x.dims[1], W = x.dims[2], C = x.dims[3];
  const std::size_t k = dw.dims[0], F = pw.dims[1];
  const std::ptrdiff_t pad = same_pad(k);
  Array mid = zeros({N, H, W, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < H; ++oy)
      for (std::size_t ox = 0; ox < W; ++ox)
        for (std::size_t c = 0; c < C; ++c) {
          double s = 0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              s += at4(x, n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c) * dw.v[(ky * k + kx) * C + c];
            }
          at4(mid, n, oy, ox, c) = s;
        }
  Array y = zeros({N, H, W, F});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t f = 0; f < F; ++f) {
          double s = b[f];
          for (std::size_t c = 0; c < C; ++c) s += at4(mid, n, i, j, c) * pw.v[c * F + f];
          at4(y, n, i, j, f) = s;
        }
  return y;
}

/// 2 x 2 window, stride 2, floor on odd extents.
inline Array max_pool2(const Array& x) {
  const std::size_t N = x.dims[0], H = x.dims[1], W = x.dims[2], C = x.dims[3];
  Array y = zeros({N, H / 2, W / 2, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H / 2; ++i)
      for (std::size_t j = 0; j < W / 2; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          double m = -INFINITY;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) m = std::max(m, at4(x, n, 2 * i + a, 2 * j + b, c));
          at4(y, n, i, j, c) = m;
        }
  return y;
}

// ---------------------------------------------------------------------------
// Scalar optimizer reference. One parameter, one gradient per call.

struct ScalarOpt {
  std::string kind;
  double lr;
  double w;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8, mu = 0.9;
  double m = 0, v = 0, vmax = 0, u = 0, vel = 0;
  int t = 0;

  void step(double g) {
    ++t;
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    if (kind == "sgd") {
      w = w - lr * g;
    } else if (kind == "sgd_momentum") {
      vel = mu * vel + g;
      w = w - lr * vel;
    } else if (kind == "adam") {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      w = w - lr * (m / c1) / (std::sqrt(v / c2) + eps);
    } else if (kind == "amsgrad") {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      if (v > vmax) vmax = v;
      w = w - lr * (m / c1) / (std::sqrt(vmax) + eps);
    } else if (kind == "adamax") {
      m = b1 * m + (1 - b1) * g;
      u = std::max(b2 * u, std::fabs(g));
      w = w - (lr / c1) * m / (u + eps);
    } else if (kind == "nadam") {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double look = b1 * (m / c1) + (1 - b1) * g / c1;
      w = w - lr * look / (std::sqrt(v / c2) + eps);
    }
  }
};

inline double grad_square(double w) { return 2 * w; }
inline double grad_abs(double w) { return w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0); }

}  // namespace oracle
