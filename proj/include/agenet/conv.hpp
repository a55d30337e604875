#pragma once

// Spatial operations on channel-last (N x H x W x C) tensors. A rank-3
// input (H x W x C) is treated as a batch of one and the result keeps rank 3.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "agenet/autograd.hpp"
#include "agenet/ops.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class Padding { same, valid };

namespace detail {

struct Geometry {
  std::size_t n, h, w, c;
  bool batched;
};

inline Geometry nhwc(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected H x W x C or N x H x W x C input, got " + shape_str(s));
}

inline Shape make_shape(const Geometry& g, std::size_t h, std::size_t w, std::size_t c) {
  return g.batched ? Shape{g.n, h, w, c} : Shape{h, w, c};
}

struct Window {
  std::size_t out;
  std::size_t pad_before;
};

/// Output extent and leading pad along one axis (TensorFlow convention for "same").
inline Window window(std::size_t in, std::size_t k, std::size_t stride, Padding p, const char* op) {
  if (stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be positive");
  if (p == Padding::valid) {
    if (k > in) {
      throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) + " larger than input " + std::to_string(in));
    }
    return {(in - k) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t pad_total = needed > in ? needed - in : 0;
  if (k > in + pad_total) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded input");
  }
  return {out, pad_total / 2};
}

}  // namespace detail

/// Dense 2-D convolution. kernels: k x k x Cin x Cout, bias: Cout.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias, Padding padding = Padding::same,
              std::size_t stride = 1) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& K = kernels.value();
  const auto g = detail::nhwc(x.shape(), "conv2d");
  if (K.rank() != 4 || K.dim(0) != K.dim(1) || K.dim(2) != g.c) {
    throw ShapeError("conv2d: kernels " + shape_str(K.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t k = K.dim(0), cout = K.dim(3), cin = g.c;
  if (bias.value().size() != cout) throw ShapeError("conv2d: bias size differs from filter count");
  const auto wy = detail::window(g.h, k, stride, padding, "conv2d");
  const auto wx = detail::window(g.w, k, stride, padding, "conv2d");
  const std::size_t oh = wy.out, ow = wx.out;

  Tensor<T> out(detail::make_shape(g, oh, ow, cout));
  const T* b = bias.value().data();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* o = out.data() + ((n * oh + oy) * ow + ox) * cout;
        for (std::size_t co = 0; co < cout; ++co) o[co] = b[co];
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(wy.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(wx.pad_before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const T* in = x.data() + ((n * g.h + iy) * g.w + ix) * cin;
            const T* kp = K.data() + (ky * k + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = in[ci];
              const T* kr = kp + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += v * kr[co];
            }
          }
        }
      }

  return input.tape()->record(
      std::move(out), {input, kernels, bias},
      [input, kernels, bias, g, k, cin, cout, oh, ow, stride, wy, wx](Tape<T>& t, const Tensor<T>& grad) {
        const Tensor<T>& x = input.value();
        const Tensor<T>& K = kernels.value();
        Tensor<T>* gx = t.grad_buffer(input);
        Tensor<T>* gk = t.grad_buffer(kernels);
        Tensor<T>* gb = t.grad_buffer(bias);
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T* go = grad.data() + ((n * oh + oy) * ow + ox) * cout;
              if (gb)
                for (std::size_t co = 0; co < cout; ++co) (*gb)[co] += go[co];
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(wy.pad_before);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(wx.pad_before);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                  const std::size_t in_off = ((n * g.h + iy) * g.w + ix) * cin;
                  const std::size_t k_off = (ky * k + kx) * cin * cout;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T* kr = K.data() + k_off + ci * cout;
                    if (gx) {
                      T s = 0;
                      for (std::size_t co = 0; co < cout; ++co) s += go[co] * kr[co];
                      (*gx)[in_off + ci] += s;
                    }
                    if (gk) {
                      const T v = x[in_off + ci];
                      T* gkr = gk->data() + k_off + ci * cout;
                      for (std::size_t co = 0; co < cout; ++co) gkr[co] += v * go[co];
                    }
                  }
                }
              }
            }
      });
}

/// Per-channel 2-D convolution (depth multiplier 1). kernels: k x k x C.
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& kernels, Padding padding = Padding::same,
                        std::size_t stride = 1) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& K = kernels.value();
  const auto g = detail::nhwc(x.shape(), "depthwise_conv2d");
  if (K.rank() != 3 || K.dim(0) != K.dim(1)) {
    throw ShapeError("depthwise_conv2d: kernels must be k x k x C, got " + shape_str(K.shape()));
  }
  if (K.dim(2) != g.c) {
    throw ShapeError("depthwise_conv2d: kernel channels " + std::to_string(K.dim(2)) + " differ from input channels " +
                     std::to_string(g.c));
  }
  const std::size_t k = K.dim(0), c = g.c;
  const auto wy = detail::window(g.h, k, stride, padding, "depthwise_conv2d");
  const auto wx = detail::window(g.w, k, stride, padding, "depthwise_conv2d");
  const std::size_t oh = wy.out, ow = wx.out;

  Tensor<T> out(detail::make_shape(g, oh, ow, c));
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* o = out.data() + ((n * oh + oy) * ow + ox) * c;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(wy.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(wx.pad_before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const T* in = x.data() + ((n * g.h + iy) * g.w + ix) * c;
            const T* kr = K.data() + (ky * k + kx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += in[ch] * kr[ch];
          }
        }
      }

  return input.tape()->record(
      std::move(out), {input, kernels}, [input, kernels, g, k, c, oh, ow, stride, wy, wx](Tape<T>& t, const Tensor<T>& grad) {
        const Tensor<T>& x = input.value();
        const Tensor<T>& K = kernels.value();
        Tensor<T>* gx = t.grad_buffer(input);
        Tensor<T>* gk = t.grad_buffer(kernels);
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T* go = grad.data() + ((n * oh + oy) * ow + ox) * c;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(wy.pad_before);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(wx.pad_before);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                  const std::size_t in_off = ((n * g.h + iy) * g.w + ix) * c;
                  const std::size_t k_off = (ky * k + kx) * c;
                  if (gx)
                    for (std::size_t ch = 0; ch < c; ++ch) (*gx)[in_off + ch] += go[ch] * K[k_off + ch];
                  if (gk)
                    for (std::size_t ch = 0; ch < c; ++ch) (*gk)[k_off + ch] += go[ch] * x[in_off + ch];
                }
              }
            }
      });
}

/// Depthwise k x k convolution followed by a 1 x 1 pointwise mix and bias.
/// depthwise: k x k x Cin, pointwise: Cin x Cout, bias: Cout.
template <typename T>
Var<T> separable_conv2d(const Var<T>& input, const Var<T>& depthwise, const Var<T>& pointwise, const Var<T>& bias,
                        Padding padding = Padding::same) {
  const auto g = detail::nhwc(input.shape(), "separable_conv2d");
  const Shape& pw = pointwise.shape();
  if (pw.size() != 2 || pw[0] != g.c || depthwise.shape().size() != 3 || depthwise.shape()[2] != g.c) {
    throw ShapeError("separable_conv2d: channel mismatch between input " + shape_str(input.shape()) + ", depthwise " +
                     shape_str(depthwise.shape()) + " and pointwise " + shape_str(pw));
  }
  if (bias.value().size() != pw[1]) throw ShapeError("separable_conv2d: bias size differs from filter count");
  Var<T> dw = depthwise_conv2d(input, depthwise, padding);
  const Shape& ds = dw.shape();
  const std::size_t oh = g.batched ? ds[1] : ds[0];
  const std::size_t ow = g.batched ? ds[2] : ds[1];
  Var<T> flat = reshape(dw, Shape{g.n * oh * ow, g.c});
  Var<T> mixed = add(matmul(flat, pointwise), bias);
  return reshape(mixed, detail::make_shape(g, oh, ow, pw[1]));
}

/// Max pooling with floor semantics on odd extents. Ties route the gradient
/// to the first maximal element in row-major window order.
template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t size = 2, std::size_t stride = 2) {
  const Tensor<T>& x = input.value();
  const auto g = detail::nhwc(x.shape(), "max_pool2d");
  if (g.h < size || g.w < size) {
    throw ShapeError("max_pool2d: spatial dims " + std::to_string(g.h) + "x" + std::to_string(g.w) +
                     " smaller than pool size " + std::to_string(size));
  }
  const std::size_t oh = (g.h - size) / stride + 1, ow = (g.w - size) / stride + 1, c = g.c;
  Tensor<T> out(detail::make_shape(g, oh, ow, c));
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((n * g.h + oy * stride) * g.w + ox * stride) * c + ch;
          for (std::size_t ky = 0; ky < size; ++ky)
            for (std::size_t kx = 0; kx < size; ++kx) {
              const std::size_t idx = ((n * g.h + oy * stride + ky) * g.w + ox * stride + kx) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = ((n * oh + oy) * ow + ox) * c + ch;
          out[o] = x[best];
          argmax[o] = best;
        }
  return input.tape()->record(std::move(out), {input}, [input, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& grad) {
    if (Tensor<T>* gx = t.grad_buffer(input)) {
      for (std::size_t o = 0; o < grad.size(); ++o) (*gx)[argmax[o]] += grad[o];
    }
  });
}

}  // namespace agenet
