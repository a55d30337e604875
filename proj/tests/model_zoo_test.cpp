#include <gtest/gtest.h>

#include <set>

#include "agenet/agenet.hpp"

using namespace agenet;
using T64 = Tensor<double>;

namespace {

std::size_t count_kind(const ModelSpec& m, const std::string& kind) {
  std::size_t n = 0;
  for (const auto& l : m.layers) n += kind == layer_kind(l);
  return n;
}

std::vector<std::size_t> dense_widths(const ModelSpec& m) {
  std::vector<std::size_t> out;
  for (const auto& l : m.layers)
    if (const auto* d = std::get_if<DenseLayer>(&l)) out.push_back(d->units);
  return out;
}

std::size_t param_size(const ModelSpec& m, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& p : parameter_layout(m))
    if (p.trainable && p.name.rfind(prefix, 0) == 0) n += numel(p.shape);
  return n;
}

T64 random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  T64 t(std::move(s));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// A model small enough to gradient-check end to end: every layer kind the
/// custom estimator uses, on a 6x6 input.
ModelSpec tiny_estimator() {
  ModelSpec m{"tiny", {6, 6, 2}, {}, OutputKind::regression_age};
  m.layers = {SeparableConv2DLayer{3, 3, Activation::relu, Init::he_uniform, 3.0},
              MaxPoolLayer{2},
              BatchNormLayer{},
              SpatialDropoutLayer{0.2},
              Conv2DLayer{4, 3, Activation::elu, Init::xavier_uniform, std::nullopt},
              FlattenLayer{},
              DenseLayer{5, Activation::selu, Init::he_uniform, std::nullopt},
              BatchNormLayer{},
              DropoutLayer{0.3},
              AlphaDropoutLayer{0.1},
              DenseLayer{1, Activation::linear, Init::he_uniform, std::nullopt}};
  trace_shapes(m);
  return m;
}

}  // namespace

TEST(CustomEstimator, LayerShapesMatchArchitectureTable) {
  const ModelSpec m = build_custom_age_estimator();
  const auto shapes = trace_shapes(m);
  std::vector<Shape> conv_out, pool_out, dense_out;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string kind = layer_kind(m.layers[i]);
    if (kind == std::string("separable_conv2d")) conv_out.push_back(shapes[i + 1]);
    if (kind == std::string("max_pool")) pool_out.push_back(shapes[i + 1]);
    if (kind == std::string("dense")) dense_out.push_back(shapes[i + 1]);
  }
  EXPECT_EQ(shapes.front(), (Shape{180, 180, 3}));
  const std::vector<Shape> want_conv{{180, 180, 64}, {90, 90, 128}, {45, 45, 128}, {22, 22, 256}, {11, 11, 256}};
  const std::vector<Shape> want_pool{{90, 90, 64}, {45, 45, 128}, {22, 22, 128}, {11, 11, 256}, {5, 5, 256}};
  const std::vector<Shape> want_dense{{128}, {64}, {32}, {1}};
  EXPECT_EQ(conv_out, want_conv);
  EXPECT_EQ(pool_out, want_pool);
  EXPECT_EQ(dense_out, want_dense);
  EXPECT_EQ(shapes.back(), (Shape{1}));
  const auto& out = std::get<DenseLayer>(m.layers.back());
  EXPECT_EQ(out.activation, Activation::relu);
}

TEST(CustomEstimator, ParameterCounts) {
  const ModelSpec m = build_custom_age_estimator();
  EXPECT_EQ(param_size(m, "L00_separable_conv2d/"), 283u);
  std::size_t first_dense = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (std::holds_alternative<DenseLayer>(m.layers[i])) {
      first_dense = i;
      break;
    }
  EXPECT_EQ(param_size(m, layer_prefix(first_dense, m.layers[first_dense]) + "/"), 819328u);
  const Network<float> net(m, 1);
  EXPECT_EQ(net.parameter_count(), trainable_parameter_count(m));
}

TEST(CustomEstimator, BlockOrderAndDropout) {
  const ModelSpec m = build_custom_age_estimator();
  EXPECT_EQ(count_kind(m, "separable_conv2d"), 5u);
  EXPECT_EQ(count_kind(m, "spatial_dropout"), 2u);
  EXPECT_EQ(count_kind(m, "dropout"), 3u);
  EXPECT_EQ(std::string(layer_kind(m.layers[0])), "separable_conv2d");
  EXPECT_EQ(std::string(layer_kind(m.layers[1])), "max_pool");
  EXPECT_EQ(std::string(layer_kind(m.layers[2])), "batch_norm");
  std::vector<double> rates;
  for (const auto& l : m.layers)
    if (const auto* d = std::get_if<DropoutLayer>(&l)) rates.push_back(d->rate);
  EXPECT_EQ(rates, (std::vector<double>{0.4, 0.3, 0.2}));
}

TEST(CustomClassifiers, OutputsAndDepth) {
  const ModelSpec age = build_custom_age_classifier();
  EXPECT_EQ(trace_shapes(age).back(), (Shape{5}));
  EXPECT_EQ(count_kind(age, "separable_conv2d"), count_kind(build_custom_age_estimator(), "separable_conv2d") + 1);
  std::size_t filters256 = 0;
  for (const auto& l : age.layers)
    if (const auto* c = std::get_if<SeparableConv2DLayer>(&l)) filters256 += c->filters == 256;
  EXPECT_EQ(filters256, 3u);
  EXPECT_EQ(std::get<DenseLayer>(age.layers.back()).activation, Activation::softmax);

  const ModelSpec gender = build_custom_gender_classifier();
  EXPECT_EQ(trace_shapes(gender).back(), (Shape{2}));
  EXPECT_EQ(dense_widths(gender), (std::vector<std::size_t>{128, 64, 32, 2}));
}

TEST(CustomEstimator, StandardConvVariantSwapsLayerType) {
  CustomCnnOptions o;
  o.conv = ConvKind::standard;
  const ModelSpec m = build_custom_age_estimator(o);
  EXPECT_EQ(count_kind(m, "conv2d"), 5u);
  EXPECT_EQ(count_kind(m, "separable_conv2d"), 0u);
  EXPECT_EQ(param_size(m, "L00_conv2d/"), 3u * 3 * 3 * 64 + 64);
}

TEST(CustomEstimator, BatchNormMomentumOption) {
  CustomCnnOptions o;
  o.bn_momentum = 0.9;
  std::size_t bn = 0;
  for (const auto& layer : build_custom_age_estimator(o).layers)
    if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
      EXPECT_EQ(b->momentum, 0.9);
      ++bn;
    }
  EXPECT_EQ(bn, 8u);
  EXPECT_NE(spec_hash(build_custom_age_estimator(o)), spec_hash(build_custom_age_estimator()));
}

TEST(CustomEstimator, ForwardOnFullSizeInput) {
  Network<float> net(build_custom_age_estimator(), 3);
  Tensor<float> x(Shape{2, 180, 180, 3});
  Rng rng(1);
  for (auto& v : x.storage()) v = static_cast<float>(rng.uniform());
  const auto y = net.predict(x);
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  for (float v : y.storage()) EXPECT_GE(v, 0.0f);
  EXPECT_THROW(net.predict(Tensor<float>(Shape{1, 200, 200, 3})), ShapeError);
}

TEST(TransferHeads, EveryHeadRunsForwardAndBackward) {
  for (auto kind : {HeadKind::vgg_gender, HeadKind::resnet_gender, HeadKind::senet_gender, HeadKind::vgg_age,
                    HeadKind::resnet_age, HeadKind::senet_age}) {
    SCOPED_TRACE(to_string(kind));
    EXPECT_EQ(parse_head_kind(to_string(kind)), kind);
    const ModelSpec spec = build_transfer_head(kind, default_head_input(kind));
    Network<float> net(spec, 5);
    Rng rng(2);
    Shape xs{4};
    xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
    Tensor<float> x(xs);
    for (auto& v : x.storage()) v = static_cast<float>(rng.normal());

    Tape<float> tape;
    const auto bound = net.bind(tape);
    const auto y = net.forward(bound, tape.constant(x), Mode::train, Rng(9));
    EXPECT_EQ(y.shape(), (Shape{4, 1}));
    const bool gender = kind == HeadKind::vgg_gender || kind == HeadKind::resnet_gender || kind == HeadKind::senet_gender;
    EXPECT_EQ(spec.output_kind, gender ? OutputKind::sigmoid_binary : OutputKind::regression_age);
    for (float v : y.value().storage()) {
      if (gender) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      } else {
        EXPECT_GE(v, 0.0f);
      }
    }
    const auto grads = tape.backward(mean(y));
    for (const auto& [name, v] : bound) {
      const auto& g = grads.at(v.id());
      EXPECT_EQ(g.shape(), v.shape()) << name;
      for (float e : g.storage()) ASSERT_TRUE(std::isfinite(e)) << name;
    }
  }
  EXPECT_THROW(parse_head_kind("inception_age"), std::invalid_argument);
}

TEST(TransferHeads, SenetHeadsMirrorResnetHeads) {
  for (auto [a, b] : {std::pair{HeadKind::resnet_age, HeadKind::senet_age}, std::pair{HeadKind::resnet_gender, HeadKind::senet_gender}}) {
    const ModelSpec ra = build_transfer_head(a, {2048}), sb = build_transfer_head(b, {2048});
    ASSERT_EQ(ra.layers.size(), sb.layers.size());
    for (std::size_t i = 0; i < ra.layers.size(); ++i) EXPECT_EQ(describe(ra.layers[i]), describe(sb.layers[i]));
    EXPECT_NE(ra.name, sb.name);
  }
}

TEST(TransferHeads, ResnetAgeStack) {
  const ModelSpec m = build_transfer_head(HeadKind::resnet_age, {2048});
  EXPECT_EQ(dense_widths(m), (std::vector<std::size_t>{512, 512, 512, 256, 128, 1}));
  EXPECT_EQ(count_kind(m, "batch_norm"), 5u);
  std::vector<double> rates;
  for (const auto& l : m.layers)
    if (const auto* d = std::get_if<DropoutLayer>(&l)) rates.push_back(d->rate);
  ASSERT_EQ(rates.size(), 5u);
  const double keep[5] = {0.5, 0.3, 0.3, 0.3, 0.5};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(rates[i], 1 - keep[i], 1e-15);
}

TEST(TransferHeads, ResnetGenderConstraint) {
  const Network<double> net(build_transfer_head(HeadKind::resnet_gender, {2048}), 1);
  ASSERT_EQ(net.constraints().size(), 1u);
  EXPECT_EQ(net.constraints().begin()->second, 3.0);
}

TEST(TransferHeads, InputShapeChecked) {
  EXPECT_THROW(build_transfer_head(HeadKind::resnet_age, {6, 6, 512}), ShapeError);
  EXPECT_THROW(build_transfer_head(HeadKind::vgg_age, {2048}), ShapeError);
  EXPECT_THROW(build_transfer_head(HeadKind::vgg_gender, {2, 2, 512}), ShapeError);
}

TEST(Network, InitIsSeededAndInferIsDeterministic) {
  const ModelSpec m = tiny_estimator();
  Network<double> a(m, 7), b(m, 7), c(m, 8);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  Rng rng(1);
  const T64 x = random_tensor(rng, {5, 6, 6, 2});
  EXPECT_EQ(a.predict(x), a.predict(x));
  EXPECT_EQ(a.predict(x), b.predict(x));
  // chunking does not change results in inference mode
  EXPECT_EQ(a.predict(x, 2), a.predict(x, 64));
}

TEST(Network, TrainModeForwardUpdatesRunningStats) {
  Network<double> net(tiny_estimator(), 2);
  Rng rng(3);
  const T64 x = random_tensor(rng, {4, 6, 6, 2});
  const auto before = net.state();
  Tape<double> tape;
  net.forward(net.bind(tape), tape.constant(x), Mode::train, Rng(1));
  const auto after = net.state();
  EXPECT_NE(before.at("L02_batch_norm/moving_mean"), after.at("L02_batch_norm/moving_mean"));
  EXPECT_EQ(before.at("L00_separable_conv2d/depthwise"), after.at("L00_separable_conv2d/depthwise"));
}

// Hand-unrolled forward of a two-layer model compared with Network::predict.
TEST(Network, MatchesHandUnrolledForward) {
  ModelSpec m{"unrolled", {3}, {}, OutputKind::regression_age};
  m.layers = {DenseLayer{4, Activation::elu, Init::he_uniform, std::nullopt}, BatchNormLayer{},
              DenseLayer{1, Activation::relu, Init::he_uniform, std::nullopt}};
  Network<double> net(m, 11);
  Rng rng(4);
  const T64 x = random_tensor(rng, {6, 3});
  net.params().at("L00_dense/bias") = random_tensor(rng, {4});
  net.params().at("L01_batch_norm/gamma") = random_tensor(rng, {4}, 0.5, 1.5);
  net.params().at("L01_batch_norm/beta") = random_tensor(rng, {4});
  net.params().at("L02_dense/bias") = T64::vector({40.0});
  auto state = net.state();
  state.at("L01_batch_norm/moving_mean") = random_tensor(rng, {4});
  state.at("L01_batch_norm/moving_var") = random_tensor(rng, {4}, 0.5, 2);
  net.load_state(state);

  const auto& p = net.state();
  const T64 got = net.predict(x);
  for (std::size_t n = 0; n < 6; ++n) {
    double out = p.at("L02_dense/bias")[0];
    for (std::size_t j = 0; j < 4; ++j) {
      double h = p.at("L00_dense/bias")[j];
      for (std::size_t i = 0; i < 3; ++i) h += x.at(n, i) * p.at("L00_dense/kernel").at(i, j);
      h = h > 0 ? h : std::expm1(h);
      h = (h - p.at("L01_batch_norm/moving_mean")[j]) / std::sqrt(p.at("L01_batch_norm/moving_var")[j] + 1e-3);
      h = h * p.at("L01_batch_norm/gamma")[j] + p.at("L01_batch_norm/beta")[j];
      out += h * p.at("L02_dense/kernel").at(j, 0);
    }
    EXPECT_NEAR(got.at(n, 0), std::max(0.0, out), 1e-12);
  }
}

TEST(Network, EveryParameterReceivesGradient) {
  for (const ModelSpec& m : {tiny_estimator(), build_transfer_head(HeadKind::resnet_age, {16}),
                             build_transfer_head(HeadKind::vgg_gender, {8, 8, 4})}) {
    SCOPED_TRACE(m.name);
    Network<double> net(m, 21);
    Rng rng(5);
    Shape xs{6};
    xs.insert(xs.end(), m.input_shape.begin(), m.input_shape.end());
    const T64 x = random_tensor(rng, xs);
    Tape<double> tape;
    const auto bound = net.bind(tape);
    const auto y = net.forward(bound, tape.constant(x), Mode::train, Rng(3));
    const auto grads = tape.backward(sum(y));
    for (const auto& [name, v] : bound) {
      EXPECT_TRUE(tape.reached(v)) << name;
      EXPECT_EQ(grads.at(v.id()).shape(), net.params().at(name).shape()) << name;
    }
  }
}

TEST(Network, EndToEndGradientCheck) {
  Network<double> net(tiny_estimator(), 13);
  Rng rng(6);
  const T64 x = random_tensor(rng, {5, 6, 6, 2});
  const T64 weights = random_tensor(rng, {5, 1});
  for (const Mode mode : {Mode::train, Mode::infer}) {
    auto loss_of = [&](const NamedTensors<double>& params) {
      Network<double> copy = net;
      copy.params() = params;
      Tape<double> tape;
      const auto y = copy.forward(copy.bind(tape), tape.constant(x), mode, Rng(17));
      return sum(mul(y, tape.constant(weights))).value().item();
    };
    Network<double> copy = net;
    Tape<double> tape;
    const auto bound = copy.bind(tape);
    const auto y = copy.forward(bound, tape.constant(x), mode, Rng(17));
    const auto grads = tape.backward(sum(mul(y, tape.constant(weights))));
    for (const auto& [name, v] : bound) {
      const T64 numeric = finite_diff<double>(
          [&](const T64& probe) {
            NamedTensors<double> p = net.params();
            p.at(name) = probe;
            return loss_of(p);
          },
          net.params().at(name));
      EXPECT_LT(max_relative_error(grads.at(v.id()), numeric), 1e-4) << name << (mode == Mode::train ? " train" : " infer");
    }
  }
}

TEST(Network, LoadStateValidates) {
  Network<double> net(tiny_estimator(), 1);
  auto state = net.state();
  EXPECT_EQ(state.size(), net.layout().size());
  state.erase(state.begin());
  EXPECT_THROW(net.load_state(state), std::invalid_argument);
  state = net.state();
  state.at("L00_separable_conv2d/bias") = T64(Shape{7});
  EXPECT_THROW(net.load_state(state), ShapeError);
}

TEST(ModelSpec, HashTracksStructure) {
  const ModelSpec a = build_custom_age_estimator();
  EXPECT_EQ(spec_hash(a), spec_hash(build_custom_age_estimator()));
  CustomCnnOptions o;
  o.max_norm = 3.0;
  EXPECT_NE(spec_hash(a), spec_hash(build_custom_age_estimator(o)));
  std::set<std::uint64_t> hashes;
  for (auto kind : {HeadKind::vgg_gender, HeadKind::resnet_gender, HeadKind::senet_gender, HeadKind::vgg_age,
                    HeadKind::resnet_age, HeadKind::senet_age})
    hashes.insert(spec_hash(build_transfer_head(kind, default_head_input(kind))));
  // senet heads share the resnet layer stacks, so only four structures are distinct
  EXPECT_EQ(hashes.size(), 4u);
}
