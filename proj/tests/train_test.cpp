#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "agenet/agenet.hpp"
#include "test_util.hpp"

using namespace agenet;
using T64 = Tensor<double>;

namespace {

ModelSpec small_regressor(std::size_t d) {
  ModelSpec m{"small_regressor", {d}, {}, OutputKind::regression_age};
  m.layers = {DenseLayer{8, Activation::relu, Init::he_uniform, std::nullopt}, BatchNormLayer{}, DropoutLayer{0.2},
              DenseLayer{1, Activation::relu, Init::he_uniform, std::nullopt}};
  return m;
}

ModelSpec logistic_head(std::size_t d) {
  ModelSpec m{"logistic_head", {d}, {}, OutputKind::sigmoid_binary};
  m.layers = {DenseLayer{1, Activation::sigmoid, Init::zeros, std::nullopt}};
  return m;
}

struct Fixture {
  T64 x;
  std::vector<double> ages;
  std::vector<double> genders;
};

Fixture linear_fixture(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Fixture f{T64(Shape{n, d}), {}, {}};
  std::vector<double> w(d);
  for (auto& v : w) v = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      f.x.at(i, j) = rng.normal();
      s += f.x.at(i, j) * w[j];
    }
    f.ages.push_back(std::clamp(std::round(40 + 12 * s), 0.0, 116.0));
    f.genders.push_back(s + 0.3 * rng.normal() > 0 ? 1 : 0);
  }
  return f;
}

std::string history_csv(const RunHistory& h) {
  std::ostringstream os;
  write_history_csv(os, h);
  return os.str();
}

}  // namespace

TEST(Train, LrColumnFollowsStepDecay) {
  const auto f = linear_fixture(40, 4, 1);
  Network<double> net(small_regressor(4), 1);
  TensorSource<double> src(f.x, f.ages);
  RunConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  const RunHistory h = train(net, src, nullptr, cfg);
  ASSERT_EQ(h.epochs.size(), 20u);
  for (std::size_t e = 0; e < 20; ++e) {
    EXPECT_EQ(h.epochs[e].epoch, e);
    EXPECT_EQ(h.epochs[e].lr, lr_at(cfg.schedule, e));
  }
  for (std::size_t e = 0; e < 9; ++e) EXPECT_EQ(h.epochs[e].lr, 1e-3);
  for (std::size_t e = 9; e < 18; ++e) EXPECT_EQ(h.epochs[e].lr, 6e-4);
  EXPECT_TRUE(h.monitored_train_set);
}

TEST(Train, SingleEpochGivesSingleEntry) {
  const auto f = linear_fixture(10, 3, 2);
  Network<double> net(small_regressor(3), 1);
  TensorSource<double> src(f.x, f.ages);
  RunConfig cfg;
  cfg.epochs = 1;
  EXPECT_EQ(train(net, src, &src, cfg).epochs.size(), 1u);
  cfg.epochs = 0;
  EXPECT_THROW(train(net, src, &src, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(train(net, src, &src, cfg), std::invalid_argument);
}

TEST(Train, DeterministicGivenSeed) {
  const auto f = linear_fixture(50, 5, 3);
  TensorSource<double> src(f.x, f.ages);
  auto run = [&](std::uint64_t seed) {
    Network<double> net(small_regressor(5), 4);
    RunConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.seed = seed;
    const auto h = train(net, src, nullptr, cfg);
    return std::make_pair(history_csv(h), net.state());
  };
  const auto a = run(1), b = run(1), c = run(2);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, c.first);
}

TEST(Train, FullBatchSgdOnLogisticHeadIsMonotone) {
  const auto f = linear_fixture(120, 6, 4);
  TensorSource<double> src(f.x, f.genders);
  Network<double> net(logistic_head(6), 1);
  RunConfig cfg;
  cfg.task = Task::gender_cls;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.schedule = LrSchedule::step_decay(0.05, 1.0, 1000);
  cfg.batch_size = 120;
  cfg.epochs = 60;
  const auto h = train(net, src, nullptr, cfg);
  for (std::size_t e = 1; e < h.epochs.size(); ++e) EXPECT_LE(h.epochs[e].train_loss, h.epochs[e - 1].train_loss) << e;
  EXPECT_GT(h.epochs.back().val_metric, 0.8);
}

TEST(Train, MaxNormHoldsAfterEveryStep) {
  const auto f = linear_fixture(64, 32, 5);
  TensorSource<double> src(f.x, f.genders);
  Network<double> net(build_transfer_head(HeadKind::resnet_gender, {32}), 2);
  ASSERT_FALSE(net.constraints().empty());
  RunConfig cfg;
  cfg.task = Task::gender_cls;
  cfg.schedule = LrSchedule::step_decay(0.5, 1.0, 1000);  // large steps push the weights hard
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.restore_best = false;
  double worst = 0;
  cfg.on_epoch = [&](const EpochRecord&) {
    for (const auto& [name, c] : net.constraints()) {
      const T64& w = net.params().at(name);
      const std::size_t units = w.shape().back(), rows = w.size() / units;
      for (std::size_t u = 0; u < units; ++u) {
        double s = 0;
        for (std::size_t r = 0; r < rows; ++r) s += w[r * units + u] * w[r * units + u];
        worst = std::max(worst, std::sqrt(s));
      }
    }
  };
  train(net, src, nullptr, cfg);
  EXPECT_LE(worst, 3.0 + 1e-6);
  EXPECT_GT(worst, 2.0);
}

TEST(Train, ClassWeightsOnlyForSigmoidOutput) {
  const auto f = linear_fixture(20, 3, 6);
  TensorSource<double> src(f.x, f.ages);
  Network<double> net(small_regressor(3), 1);
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.class_weights = true;
  EXPECT_THROW(train(net, src, nullptr, cfg), std::invalid_argument);
  cfg.class_weights = false;
  cfg.task = Task::gender_cls;
  EXPECT_THROW(train(net, src, nullptr, cfg), std::invalid_argument);
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
  auto f = linear_fixture(12, 3, 7);
  f.x.at(0, 0) = NAN;
  TensorSource<double> src(f.x, f.ages);
  ModelSpec reg{"lin", {3}, {DenseLayer{1, Activation::linear, Init::he_uniform, std::nullopt}}, OutputKind::regression_age};
  Network<double> lin(reg, 1);
  RunConfig cfg;
  cfg.batch_size = 12;
  try {
    train(lin, src, nullptr, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, BestEpochCheckpointed) {
  testutil::TempDir dir;
  const auto f = linear_fixture(40, 4, 8);
  TensorSource<double> src(f.x, f.ages);
  Network<double> net(small_regressor(4), 3);
  RunConfig cfg;
  cfg.epochs = 5;
  cfg.checkpoint_path = (dir.path() / "best.ckpt").string();
  const auto h = train(net, src, &src, cfg);
  double best = INFINITY;
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(h.epochs[h.best_epoch].val_loss, best);
  const auto loaded = load_checkpoint<double>(*cfg.checkpoint_path, net.spec());
  EXPECT_EQ(loaded.state(), net.state());
}

TEST(History, CsvRoundTrip) {
  RunHistory h;
  h.epochs = {{0, 1.5, 2.25, 9.125, 1e-3}, {1, 1.0 / 3.0, 0.1, 8.0, 6e-4}};
  std::istringstream is(history_csv(h));
  const auto back = read_history_csv(is);
  ASSERT_EQ(back.epochs.size(), 2u);
  EXPECT_EQ(back.epochs[1].train_loss, 1.0 / 3.0);
  EXPECT_EQ(back.epochs[1].lr, 6e-4);
  std::istringstream bad("epoch,loss\n");
  EXPECT_THROW(read_history_csv(bad), DataError);
}

TEST(Evaluate, ExactModelScoresPerfectly) {
  ModelSpec m{"identity", {1}, {DenseLayer{1, Activation::relu, Init::ones, std::nullopt}}, OutputKind::regression_age};
  Network<double> net(m, 1);
  std::vector<double> ages{3, 17, 45, 88, 110};
  T64 x(Shape{5, 1}, ages);
  const auto rep = evaluate(net, TensorSource<double>(x, ages), Task::age_reg);
  EXPECT_EQ(*rep.mae, 0.0);
  EXPECT_EQ(rep.per_decade.size(), 11u);

  ModelSpec g{"gate", {1}, {DenseLayer{1, Activation::sigmoid, Init::ones, std::nullopt}}, OutputKind::sigmoid_binary};
  Network<double> gate(g, 1);
  gate.params().at("L00_dense/kernel") = T64::matrix({{50}});
  const std::vector<double> labels{0, 1, 1, 0};
  const auto acc = evaluate(gate, TensorSource<double>(T64::matrix({{-1}, {1}, {2}, {-3}}), labels), Task::gender_cls);
  EXPECT_EQ(*acc.accuracy, 1.0);
  EXPECT_FALSE(acc.mae);
}

TEST(Evaluate, ConstantPredictorOnUniformAges) {
  Rng rng(9);
  const std::size_t n = 20000;
  std::vector<double> ages(n);
  for (auto& a : ages) a = static_cast<double>(rng.below(101));
  ModelSpec m{"constant", {1}, {DenseLayer{1, Activation::relu, Init::zeros, std::nullopt}}, OutputKind::regression_age};
  Network<double> net(m, 1);
  double mean = 0;
  for (double a : ages) mean += a;
  mean /= static_cast<double>(n);
  net.params().at("L00_dense/bias") = T64::vector({mean});
  const auto rep = evaluate(net, TensorSource<double>(T64(Shape{n, 1}), ages), Task::age_reg);
  EXPECT_NEAR(*rep.mae, 25.0, 0.5);
  std::size_t counted = 0;
  for (const auto& row : rep.per_decade) counted += row.count;
  EXPECT_EQ(counted, n);
  EXPECT_EQ(rep.per_decade.front().ages, "0-10");
  EXPECT_EQ(rep.per_decade.back().count, 0u);
  EXPECT_THROW(evaluate(net, TensorSource<double>(T64(Shape{0, 1}), {}), Task::age_reg), std::exception);
}

TEST(Evaluate, ReportText) {
  EvalReport r;
  r.samples = 2;
  r.mae = 1.5;
  r.per_decade = per_decade_mae(std::vector<double>{10, 30}, std::vector<double>{9, 32});
  std::ostringstream os;
  write_eval_report(os, r);
  EXPECT_NE(os.str().find("mae\t1.5"), std::string::npos);
  EXPECT_NE(os.str().find("31-40\t1\t2"), std::string::npos);
  EXPECT_NE(os.str().find("101-116\t0\t-"), std::string::npos);
}

TEST(Predict, SigmoidThresholdAndConfidence) {
  ModelSpec g{"gate", {1}, {DenseLayer{1, Activation::sigmoid, Init::zeros, std::nullopt}}, OutputKind::sigmoid_binary};
  Network<double> net(g, 1);
  net.params().at("L00_dense/bias") = T64::vector({std::log(0.8 / 0.2)});
  const auto p = predict_one(net, Task::gender_cls, T64::vector({0}));
  EXPECT_EQ(p.label, 1);
  EXPECT_NEAR(p.confidence, 0.8, 1e-12);
  net.params().at("L00_dense/bias") = T64::vector({std::log(0.3 / 0.7)});
  const auto q = predict_one(net, Task::gender_cls, T64::vector({0}));
  EXPECT_EQ(q.label, 0);
  EXPECT_NEAR(q.confidence, 0.7, 1e-12);
  EXPECT_THROW(predict_one(net, Task::gender_cls, T64::vector({0, 1})), ShapeError);
}

TEST(Predict, AgeNeverNegativeAndRepeatable) {
  Network<double> net(small_regressor(4), 6);
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    T64 s(Shape{4});
    for (auto& v : s.storage()) v = 10 * rng.normal();
    const auto a = predict_one(net, Task::age_reg, s);
    EXPECT_GE(a.age, 0.0);
    EXPECT_EQ(a.age, predict_one(net, Task::age_reg, s).age);
  }
}

TEST(Predict, SoftmaxLabelAndProbs) {
  ModelSpec m{"cls", {2}, {DenseLayer{5, Activation::softmax, Init::he_uniform, std::nullopt}}, OutputKind::softmax_5};
  Network<double> net(m, 3);
  const auto p = predict_one(net, Task::age_cls, T64::vector({0.3, -1}));
  ASSERT_EQ(p.probs.size(), 5u);
  EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-12);
  EXPECT_EQ(p.confidence, *std::max_element(p.probs.begin(), p.probs.end()));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testutil::TempDir dir;
  const std::string path = (dir.path() / "m.ckpt").string();
  Network<float> net(build_transfer_head(HeadKind::resnet_age, {64}), 5);
  // move the running statistics off their defaults
  Tensor<float> x(Shape{16, 64});
  Rng rng(1);
  for (auto& v : x.storage()) v = static_cast<float>(rng.normal());
  Tape<float> tape;
  net.forward(net.bind(tape), tape.constant(x), Mode::train, Rng(2));
  save_checkpoint(net, path, {{"task", "age_reg"}, {"note", "two words"}});

  CheckpointMeta meta;
  auto back = load_checkpoint<float>(path, net.spec(), &meta);
  EXPECT_EQ(back.state(), net.state());
  EXPECT_EQ(back.predict(x), net.predict(x));
  EXPECT_EQ(meta.at("note"), "two words");
}

TEST(Checkpoint, StoresEveryNamedTensorOnce) {
  testutil::TempDir dir;
  const std::string path = (dir.path() / "c.ckpt").string();
  Network<double> net(build_transfer_head(HeadKind::vgg_gender, {6, 6, 8}), 1);
  save_checkpoint(net, path);
  const auto h = read_checkpoint_header(path);
  std::multiset<std::string> stored;
  for (const auto& [name, bytes] : h.tensors) stored.insert(name);
  std::multiset<std::string> expected;
  for (const auto& p : net.layout()) expected.insert(p.name);
  EXPECT_EQ(stored, expected);
  EXPECT_EQ(h.spec_hash, spec_hash(net.spec()));
}

TEST(Checkpoint, RejectsOtherSpecAndCorruption) {
  testutil::TempDir dir;
  const std::string path = (dir.path() / "r.ckpt").string();
  Network<double> net(build_transfer_head(HeadKind::resnet_age, {16}), 1);
  save_checkpoint(net, path);
  EXPECT_THROW(load_checkpoint<double>(path, build_transfer_head(HeadKind::resnet_age, {32})), CorruptFileError);
  EXPECT_THROW(load_checkpoint<double>(path, build_transfer_head(HeadKind::resnet_gender, {16})), CorruptFileError);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  EXPECT_THROW(load_checkpoint<double>(path, net.spec()), CorruptFileError);
  {
    std::ofstream(path) << "NOT A CHECKPOINT\n";
  }
  EXPECT_THROW(read_checkpoint_header(path), CorruptFileError);
}
