#pragma once

// Runtime for a ModelSpec: owns parameters and batch-norm statistics, binds
// them onto a tape and runs the layer list over a batch.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "agenet/autograd.hpp"
#include "agenet/conv.hpp"
#include "agenet/error.hpp"
#include "agenet/layers.hpp"
#include "agenet/model_spec.hpp"
#include "agenet/ops.hpp"
#include "agenet/optim.hpp"
#include "agenet/rng.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

template <typename T>
using BoundParams = std::map<std::string, Var<T>>;

template <typename T>
class Network {
 public:
  /// Builds and initializes every parameter from `seed`.
  Network(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    layout_ = parameter_layout(spec_);
    const Rng root(seed);
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const ParamInfo& p = layout_[i];
      if (!p.trainable) continue;
      Rng r = root.split(i);
      params_.emplace(p.name, init_weights<T>(p.init, p.shape, r));
      if (p.max_norm) constraints_.emplace(p.name, *p.max_norm);
    }
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      if (const auto* bn = std::get_if<BatchNormLayer>(&spec_.layers[i])) {
        const std::size_t c = shapes()[i].back();
        bn_.emplace(i, BatchNormState<T>(c, T(bn->momentum), T(bn->epsilon)));
      }
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<ParamInfo>& layout() const noexcept { return layout_; }
  std::vector<Shape> shapes() const { return trace_shapes(spec_); }

  NamedTensors<T>& params() noexcept { return params_; }
  const NamedTensors<T>& params() const noexcept { return params_; }
  const std::map<std::string, double>& constraints() const noexcept { return constraints_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  /// Trainable parameters plus running statistics, keyed as in layout().
  NamedTensors<T> state() const {
    NamedTensors<T> out = params_;
    for (const auto& [i, s] : bn_) {
      const std::string p = layer_prefix(i, spec_.layers[i]) + "/";
      out.emplace(p + "moving_mean", s.running_mean);
      out.emplace(p + "moving_var", s.running_var);
    }
    return out;
  }

  /// Replaces every tensor; `tensors` must match layout() exactly.
  void load_state(const NamedTensors<T>& tensors) {
    if (tensors.size() != layout_.size()) {
      throw std::invalid_argument("load_state: expected " + std::to_string(layout_.size()) + " tensors, got " +
                                  std::to_string(tensors.size()));
    }
    for (const auto& p : layout_) {
      auto it = tensors.find(p.name);
      if (it == tensors.end()) throw std::invalid_argument("load_state: missing tensor '" + p.name + "'");
      if (it->second.shape() != p.shape) {
        throw ShapeError("load_state: '" + p.name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                         shape_str(p.shape));
      }
    }
    for (auto& [name, t] : params_) t = tensors.at(name);
    for (auto& [i, s] : bn_) {
      const std::string p = layer_prefix(i, spec_.layers[i]) + "/";
      s.running_mean = tensors.at(p + "moving_mean");
      s.running_var = tensors.at(p + "moving_var");
    }
  }

  /// Projects constrained weights back into their max-norm ball.
  void apply_constraints() {
    for (const auto& [name, c] : constraints_) params_.at(name) = apply_max_norm(std::move(params_.at(name)), c);
  }

  /// Records every trainable parameter as a gradient-requiring leaf.
  BoundParams<T> bind(Tape<T>& tape) const {
    BoundParams<T> out;
    for (const auto& [name, t] : params_) out.emplace(name, tape.leaf(t, true));
    return out;
  }

  /// x is [N, input_shape...] on the tape that `bound` lives on. Train mode samples dropout masks from `rng`
  /// (split per layer) and updates batch-norm running statistics.
  Var<T> forward(const BoundParams<T>& bound, const Var<T>& x, Mode mode, const Rng& rng) {
    const Shape& xs = x.shape();
    if (xs.size() != spec_.input_shape.size() + 1 || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), xs.begin() + 1)) {
      throw ShapeError(spec_.name + ": input " + shape_str(xs) + " does not match [N x " + shape_str(spec_.input_shape) + "]");
    }
    Var<T> h = x;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      try {
        h = run_layer(bound, h, i, mode, rng);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind(spec_.layers[i]) + "): " + e.what());
      }
    }
    return h;
  }

  /// Inference over a batch, processed in chunks of `chunk` samples.
  Tensor<T> predict(const Tensor<T>& x, std::size_t chunk = 64) {
    if (x.rank() == 0 || x.dim(0) == 0) throw std::invalid_argument("predict: empty batch");
    const std::size_t n = x.dim(0);
    const std::size_t per = x.size() / n;
    chunk = std::max<std::size_t>(1, chunk);
    std::vector<T> out;
    std::size_t width = 0;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t b = std::min(chunk, n - start);
      Shape s = x.shape();
      s[0] = b;
      std::vector<T> slice(x.data() + start * per, x.data() + (start + b) * per);
      Tape<T> tape;
      BoundParams<T> bound;
      for (const auto& [name, t] : params_) bound.emplace(name, tape.constant(t));
      Var<T> y = forward(bound, tape.constant(Tensor<T>(s, std::move(slice))), Mode::infer, Rng(0));
      width = y.value().size() / b;
      out.insert(out.end(), y.value().storage().begin(), y.value().storage().end());
    }
    return Tensor<T>(Shape{n, width}, std::move(out));
  }

 private:
  const Var<T>& param(const BoundParams<T>& bound, std::size_t i, const char* leaf) const {
    const std::string key = layer_prefix(i, spec_.layers[i]) + "/" + leaf;
    auto it = bound.find(key);
    if (it == bound.end()) throw std::invalid_argument("forward: parameter '" + key + "' is not bound");
    return it->second;
  }

  Var<T> run_layer(const BoundParams<T>& bound, const Var<T>& h, std::size_t i, Mode mode, const Rng& rng) {
    const LayerSpec& l = spec_.layers[i];
    return std::visit(
        [&](const auto& v) -> Var<T> {
          using L = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<L, Conv2DLayer>) {
            return apply_activation(v.activation, conv2d(h, param(bound, i, "kernel"), param(bound, i, "bias")));
          } else if constexpr (std::is_same_v<L, SeparableConv2DLayer>) {
            return apply_activation(v.activation, separable_conv2d(h, param(bound, i, "depthwise"),
                                                                   param(bound, i, "pointwise"), param(bound, i, "bias")));
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            return max_pool2d(h, v.size, v.size);
          } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
            return batch_norm(h, param(bound, i, "gamma"), param(bound, i, "beta"), bn_.at(i), mode);
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            return apply_activation(v.activation, dense(h, param(bound, i, "kernel"), param(bound, i, "bias")));
          } else if constexpr (std::is_same_v<L, DropoutLayer>) {
            Rng r = rng.split(i);
            return dropout(h, v.rate, mode, r);
          } else if constexpr (std::is_same_v<L, SpatialDropoutLayer>) {
            Rng r = rng.split(i);
            return spatial_dropout(h, v.rate, mode, r);
          } else if constexpr (std::is_same_v<L, AlphaDropoutLayer>) {
            Rng r = rng.split(i);
            return alpha_dropout(h, v.rate, mode, r);
          } else if constexpr (std::is_same_v<L, ActivationLayer>) {
            return apply_activation(v.activation, h);
          } else {
            const std::size_t n = h.shape().empty() ? 1 : h.shape()[0];
            return reshape(h, Shape{n, n ? h.value().size() / n : 0});
          }
        },
        l);
  }

  ModelSpec spec_;
  std::vector<ParamInfo> layout_;
  NamedTensors<T> params_;
  std::map<std::size_t, BatchNormState<T>> bn_;
  std::map<std::string, double> constraints_;
};

}  // namespace agenet
