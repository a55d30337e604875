#pragma once

// Mini-batch training, evaluation and single-sample prediction.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "agenet/autograd.hpp"
#include "agenet/checkpoint.hpp"
#include "agenet/data.hpp"
#include "agenet/error.hpp"
#include "agenet/image.hpp"
#include "agenet/losses.hpp"
#include "agenet/network.hpp"
#include "agenet/optim.hpp"
#include "agenet/rng.hpp"

namespace agenet {

enum class Task { age_reg, age_cls, gender_cls };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::age_reg: return "age_reg";
    case Task::age_cls: return "age_cls";
    case Task::gender_cls: return "gender_cls";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (auto t : {Task::age_reg, Task::age_cls, Task::gender_cls})
    if (s == to_string(t)) return t;
  throw std::invalid_argument("unknown task '" + s + "'");
}

/// Age in years for the age tasks, the 0/1 gender label otherwise.
inline double raw_target(const FaceRecord& r, Task t) { return t == Task::gender_cls ? r.gender : r.age; }

inline std::vector<double> raw_targets(const std::vector<FaceRecord>& records, Task t) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(raw_target(r, t));
  return out;
}

inline void check_task_output(Task t, OutputKind k) {
  const bool ok = (t == Task::age_reg && k == OutputKind::regression_age) ||
                  (t == Task::age_cls && k == OutputKind::softmax_5) ||
                  (t == Task::gender_cls && (k == OutputKind::softmax_2 || k == OutputKind::sigmoid_binary));
  if (!ok) throw std::invalid_argument(std::string("task ") + to_string(t) + " cannot train a " + to_string(k) + " output");
}

// ---------------------------------------------------------------------------
// Sample sources

template <typename T>
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Shape sample_shape() const = 0;
  /// Stacked inputs [idx.size(), sample_shape...].
  virtual Tensor<T> inputs(std::span<const std::size_t> idx) const = 0;
  virtual double target(std::size_t i) const = 0;
};

/// In-memory samples, e.g. aligned feature rows.
template <typename T>
class TensorSource final : public SampleSource<T> {
 public:
  TensorSource(Tensor<T> x, std::vector<double> targets) : x_(std::move(x)), targets_(std::move(targets)) {
    if (x_.rank() < 2) throw ShapeError("TensorSource: inputs need [n, dims...], got " + shape_str(x_.shape()));
    if (x_.dim(0) != targets_.size()) {
      throw ShapeError("TensorSource: " + std::to_string(targets_.size()) + " targets for " + std::to_string(x_.dim(0)) + " rows");
    }
  }

  std::size_t size() const override { return targets_.size(); }
  Shape sample_shape() const override { return Shape(x_.shape().begin() + 1, x_.shape().end()); }
  double target(std::size_t i) const override { return targets_.at(i); }

  Tensor<T> inputs(std::span<const std::size_t> idx) const override {
    const std::size_t per = x_.size() / x_.dim(0);
    Shape s = x_.shape();
    s[0] = idx.size();
    std::vector<T> out;
    out.reserve(idx.size() * per);
    for (std::size_t i : idx) {
      if (i >= size()) throw std::out_of_range("TensorSource: sample index out of range");
      out.insert(out.end(), x_.data() + i * per, x_.data() + (i + 1) * per);
    }
    return Tensor<T>(s, std::move(out));
  }

  const Tensor<T>& data() const noexcept { return x_; }

 private:
  Tensor<T> x_;
  std::vector<double> targets_;
};

/// Decodes and resizes image files on demand.
template <typename T>
class ImageSource final : public SampleSource<T> {
 public:
  ImageSource(std::vector<FaceRecord> records, Task task, std::size_t side)
      : records_(std::move(records)), task_(task), side_(side) {}

  std::size_t size() const override { return records_.size(); }
  Shape sample_shape() const override { return {side_, side_, 3}; }
  double target(std::size_t i) const override { return raw_target(records_.at(i), task_); }

  Tensor<T> inputs(std::span<const std::size_t> idx) const override {
    const std::size_t per = side_ * side_ * 3;
    std::vector<T> out;
    out.reserve(idx.size() * per);
    for (std::size_t i : idx) {
      const Tensor<T> img = prepare_image<T>(records_.at(i).image_path, side_);
      out.insert(out.end(), img.storage().begin(), img.storage().end());
    }
    return Tensor<T>(Shape{idx.size(), side_, side_, 3}, std::move(out));
  }

 private:
  std::vector<FaceRecord> records_;
  Task task_;
  std::size_t side_;
};

// ---------------------------------------------------------------------------
// Targets, losses, metrics

template <typename T>
Tensor<T> target_tensor(Task task, OutputKind kind, std::span<const double> raw) {
  check_task_output(task, kind);
  const std::size_t n = raw.size();
  switch (kind) {
    case OutputKind::regression_age:
    case OutputKind::sigmoid_binary: {
      Tensor<T> t(Shape{n, 1});
      for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(raw[i]);
      return t;
    }
    case OutputKind::softmax_5:
    case OutputKind::softmax_2: {
      const std::size_t k = output_width(kind);
      Tensor<T> t(Shape{n, k}, T{0});
      for (std::size_t i = 0; i < n; ++i) {
        const int label = task == Task::age_cls ? age_to_class(static_cast<int>(raw[i])) : static_cast<int>(raw[i]);
        if (label < 0 || static_cast<std::size_t>(label) >= k) throw DataError("label " + std::to_string(label) + " outside output width");
        t[i * k + static_cast<std::size_t>(label)] = T{1};
      }
      return t;
    }
  }
  throw std::invalid_argument("unknown output kind");
}

template <typename T>
Var<T> task_loss(OutputKind kind, const Var<T>& pred, const Tensor<T>& target, const std::optional<ClassWeights>& weights) {
  switch (kind) {
    case OutputKind::regression_age: return mse(pred, pred.tape()->constant(target));
    case OutputKind::softmax_5:
    case OutputKind::softmax_2: return categorical_cross_entropy(pred, target);
    case OutputKind::sigmoid_binary: return binary_cross_entropy(pred, target, weights);
  }
  throw std::invalid_argument("unknown output kind");
}

/// Class labels from network outputs: argmax for softmax, p >= 0.5 for sigmoid.
template <typename T>
std::vector<int> output_labels(OutputKind kind, const Tensor<T>& out) {
  return kind == OutputKind::sigmoid_binary ? threshold_labels(out) : argmax_labels(out);
}

/// Ground-truth class labels for the classification tasks.
inline std::vector<int> truth_labels(Task task, std::span<const double> raw) {
  std::vector<int> out;
  out.reserve(raw.size());
  for (double v : raw) out.push_back(task == Task::age_cls ? age_to_class(static_cast<int>(v)) : static_cast<int>(v));
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batches

/// Sample indices of every batch of one epoch: a permutation seeded by
/// (seed, epoch) cut into runs of batch_size; the last run may be shorter.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                           std::size_t epoch) {
  if (n == 0) throw std::invalid_argument("epoch_batches: no samples");
  if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch size must be at least 1");
  const std::vector<std::size_t> order = Rng(seed).split(epoch).permutation(n);
  std::vector<std::vector<std::size_t>> out;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(std::min(batch_size, n - start)));
  }
  return out;
}

template <typename T>
struct Batch {
  std::vector<std::size_t> index;
  std::vector<double> raw;  // untransformed targets
  Tensor<T> inputs;         // [b, sample_shape...]
  Tensor<T> targets;        // encoded for the output kind
};

/// Lazily materialises the batches of one epoch in seeded order.
template <typename T>
class BatchIter {
 public:
  BatchIter(const SampleSource<T>& src, Task task, OutputKind kind, std::size_t batch_size, std::uint64_t seed,
            std::size_t epoch = 0)
      : src_(&src), task_(task), kind_(kind), plan_(epoch_batches(src.size(), batch_size, seed, epoch)) {
    check_task_output(task, kind);
  }

  std::size_t batch_count() const noexcept { return plan_.size(); }
  std::size_t position() const noexcept { return next_; }

  std::optional<Batch<T>> next() {
    if (next_ == plan_.size()) return std::nullopt;
    Batch<T> b;
    b.index = plan_[next_++];
    b.raw.reserve(b.index.size());
    for (std::size_t i : b.index) b.raw.push_back(src_->target(i));
    b.inputs = src_->inputs(b.index);
    b.targets = target_tensor<T>(task_, kind_, b.raw);
    return b;
  }

 private:
  const SampleSource<T>* src_;
  Task task_;
  OutputKind kind_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// History

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_metric = 0;  // MAE for age_reg, accuracy otherwise
  double lr = 0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool monitored_train_set = false;  // no validation source was given
};

inline void write_history_csv(std::ostream& os, const RunHistory& h) {
  os << "epoch,train_loss,val_loss,val_metric,lr\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : h.epochs) os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_metric << ',' << e.lr << '\n';
  os.precision(old);
}

inline RunHistory read_history_csv(std::istream& is) {
  RunHistory h;
  std::string line;
  if (!std::getline(is, line) || line.rfind("epoch,train_loss,val_loss,val_metric,lr", 0) != 0) {
    throw DataError("history CSV: missing or unexpected header");
  }
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochRecord e;
    char c1, c2, c3, c4;
    if (!(ls >> e.epoch >> c1 >> e.train_loss >> c2 >> e.val_loss >> c3 >> e.val_metric >> c4 >> e.lr) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw DataError("history CSV: malformed row " + std::to_string(row));
    }
    h.epochs.push_back(e);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training

struct RunConfig {
  Task task = Task::age_reg;
  std::string model = "custom";
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  OptimizerKind optimizer = OptimizerKind::adam;
  OptimizerHyper hyper;
  LrSchedule schedule = LrSchedule::step_decay();
  std::uint64_t seed = 42;
  bool class_weights = false;
  std::optional<std::string> checkpoint_path;  // best-validation parameters are written here
  CheckpointMeta checkpoint_meta;
  bool restore_best = true;  // leave the network at its best epoch when done
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (!(schedule.initial_lr > 0)) throw std::invalid_argument("initial learning rate must be positive");
  }
};

struct LossAndOutputs {
  double loss = 0;
  Tensor<double> outputs;  // [n, output width]
};

/// Infer-mode pass over a whole source in chunks; loss averaged per sample.
template <typename T>
LossAndOutputs infer_all(Network<T>& net, const SampleSource<T>& src, Task task, std::size_t chunk,
                         const std::optional<ClassWeights>& weights = {}) {
  const std::size_t n = src.size();
  if (n == 0) throw std::invalid_argument("evaluation set is empty");
  const OutputKind kind = net.spec().output_kind;
  const std::size_t width = output_width(kind);
  std::vector<double> out;
  out.reserve(n * width);
  double loss = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t b = std::min(chunk, n - start);
    idx.resize(b);
    std::vector<double> raw(b);
    for (std::size_t i = 0; i < b; ++i) {
      idx[i] = start + i;
      raw[i] = src.target(start + i);
    }
    Tape<T> tape;
    BoundParams<T> bound;
    for (const auto& [name, t] : net.params()) bound.emplace(name, tape.constant(t));
    const Var<T> pred = net.forward(bound, tape.constant(src.inputs(idx)), Mode::infer, Rng(0));
    const Var<T> l = task_loss(kind, pred, target_tensor<T>(task, kind, raw), weights);
    loss += static_cast<double>(l.value().item()) * static_cast<double>(b);
    for (T v : pred.value().storage()) out.push_back(static_cast<double>(v));
  }
  return {loss / static_cast<double>(n), Tensor<double>(Shape{n, width}, std::move(out))};
}

/// MAE for age_reg, accuracy for the classification tasks.
inline double task_metric(Task task, OutputKind kind, const Tensor<double>& outputs, std::span<const double> raw) {
  if (task == Task::age_reg) return mae<double>(outputs.values(), raw);
  return accuracy(output_labels(kind, outputs), truth_labels(task, raw));
}

template <typename T>
std::vector<double> source_targets(const SampleSource<T>& src) {
  std::vector<double> raw(src.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = src.target(i);
  return raw;
}

/// Trains `net` in place. Each epoch visits the training set in a seeded
/// order (partial last batch included), then scores the validation source,
/// or the training set when none is given. The lowest-validation-loss epoch
/// is kept (and checkpointed when a path is configured).
template <typename T>
RunHistory train(Network<T>& net, const SampleSource<T>& train_set,
                 const std::type_identity_t<SampleSource<T>>* val_set, const RunConfig& cfg) {
  cfg.validate();
  const OutputKind kind = net.spec().output_kind;
  check_task_output(cfg.task, kind);
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
  if (train_set.sample_shape() != net.spec().input_shape) {
    throw ShapeError("training samples " + shape_str(train_set.sample_shape()) + " do not match model input " +
                     shape_str(net.spec().input_shape));
  }
  if (val_set && val_set->size() == 0) val_set = nullptr;

  std::optional<ClassWeights> weights;
  if (cfg.class_weights) {
    if (kind != OutputKind::sigmoid_binary) throw std::invalid_argument("class weights require a sigmoid output");
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < train_set.size(); ++i) ++counts[static_cast<int>(train_set.target(i))];
    weights = balanced_class_weights(counts);
  }

  Optimizer<T> opt(cfg.optimizer, cfg.hyper);
  const Rng dropout_root = Rng(cfg.seed).split(0x5eed);
  const SampleSource<T>& monitor = val_set ? *val_set : train_set;
  const std::vector<double> monitor_raw = source_targets(monitor);

  RunHistory history;
  history.monitored_train_set = val_set == nullptr;
  double best_loss = std::numeric_limits<double>::infinity();
  NamedTensors<T> best_state = net.state();
  const std::size_t n = train_set.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch);
    const Rng epoch_rng = dropout_root.split(epoch);
    double loss_sum = 0;
    BatchIter<T> batches(train_set, cfg.task, kind, cfg.batch_size, cfg.seed, epoch);
    while (auto bt = batches.next()) {
      const std::size_t batch = batches.position() - 1;
      const std::size_t b = bt->index.size();
      Tape<T> tape;
      const BoundParams<T> bound = net.bind(tape);
      const Var<T> pred = net.forward(bound, tape.constant(std::move(bt->inputs)), Mode::train, epoch_rng.split(batch));
      const Var<T> loss = task_loss(kind, pred, bt->targets, weights);
      const double lv = static_cast<double>(loss.value().item());
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss at " + where);

      const Gradients<T> g = tape.backward(loss);
      NamedTensors<T> grads;
      for (const auto& [name, v] : bound) grads.emplace(name, g.at(v.id()));
      try {
        opt.step(net.params(), grads, lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      net.apply_constraints();
      loss_sum += lv * static_cast<double>(b);
    }

    const LossAndOutputs eval = infer_all(net, monitor, cfg.task, std::max<std::size_t>(cfg.batch_size, 64), weights);
    if (!std::isfinite(eval.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), eval.loss, task_metric(cfg.task, kind, eval.outputs, monitor_raw), lr};
    history.epochs.push_back(rec);
    if (eval.loss < best_loss) {
      best_loss = eval.loss;
      history.best_epoch = epoch;
      best_state = net.state();
      if (cfg.checkpoint_path) save_checkpoint(net, *cfg.checkpoint_path, cfg.checkpoint_meta);
    }
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  if (cfg.restore_best) net.load_state(best_state);
  return history;
}

// ---------------------------------------------------------------------------
// Evaluation and prediction

struct DecadeRow {
  std::string ages;
  std::size_t count = 0;
  double mae = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  Task task = Task::age_reg;
  std::size_t samples = 0;
  double loss = 0;
  std::optional<double> mae;
  std::optional<double> accuracy;
  std::vector<DecadeRow> per_decade;  // age_reg only; one row per age bucket
};

/// Per-bucket MAE using the same eleven age ranges as the composition tables.
inline std::vector<DecadeRow> per_decade_mae(std::span<const double> pred, std::span<const double> age) {
  if (pred.size() != age.size()) throw ShapeError("per_decade_mae: length mismatch");
  std::vector<DecadeRow> rows(kAgeBuckets);
  std::vector<double> sum(kAgeBuckets, 0.0);
  for (std::size_t b = 0; b < kAgeBuckets; ++b) rows[b].ages = age_bucket_label(b);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t b = age_bucket(static_cast<int>(age[i]));
    ++rows[b].count;
    sum[b] += std::abs(age[i] - pred[i]);
  }
  for (std::size_t b = 0; b < kAgeBuckets; ++b)
    if (rows[b].count) rows[b].mae = sum[b] / static_cast<double>(rows[b].count);
  return rows;
}

template <typename T>
EvalReport evaluate(Network<T>& net, const SampleSource<T>& src, Task task, std::size_t chunk = 64) {
  check_task_output(task, net.spec().output_kind);
  const LossAndOutputs r = infer_all(net, src, task, chunk);
  const std::vector<double> raw = source_targets(src);
  EvalReport rep;
  rep.task = task;
  rep.samples = src.size();
  rep.loss = r.loss;
  if (task == Task::age_reg) {
    rep.mae = mae<double>(r.outputs.values(), raw);
    rep.per_decade = per_decade_mae(r.outputs.values(), raw);
  } else {
    rep.accuracy = task_metric(task, net.spec().output_kind, r.outputs, raw);
  }
  return rep;
}

inline void write_eval_report(std::ostream& os, const EvalReport& r) {
  os << "task\t" << to_string(r.task) << "\nsamples\t" << r.samples << "\nloss\t" << r.loss << '\n';
  if (r.mae) os << "mae\t" << *r.mae << '\n';
  if (r.accuracy) os << "accuracy\t" << *r.accuracy << '\n';
  if (!r.per_decade.empty()) {
    os << "ages\tcount\tmae\n";
    for (const auto& d : r.per_decade) {
      os << d.ages << '\t' << d.count << '\t';
      if (d.count) os << d.mae;
      else os << '-';
      os << '\n';
    }
  }
}

struct Prediction {
  Task task = Task::age_reg;
  double age = 0;            // age_reg
  int label = -1;            // classification tasks
  double confidence = 0;     // probability of the predicted label
  std::vector<double> probs; // per-class probabilities
};

/// Single-sample inference; `sample` has the model's input shape.
template <typename T>
Prediction predict_one(Network<T>& net, Task task, const Tensor<T>& sample) {
  const OutputKind kind = net.spec().output_kind;
  check_task_output(task, kind);
  if (sample.shape() != net.spec().input_shape) {
    throw ShapeError("predict: sample " + shape_str(sample.shape()) + " does not match model input " +
                     shape_str(net.spec().input_shape));
  }
  Shape batched{1};
  batched.insert(batched.end(), sample.shape().begin(), sample.shape().end());
  const Tensor<T> out = net.predict(sample.reshaped(batched));
  Prediction p;
  p.task = task;
  if (kind == OutputKind::regression_age) {
    p.age = static_cast<double>(out[0]);
  } else if (kind == OutputKind::sigmoid_binary) {
    const double q = static_cast<double>(out[0]);
    p.label = q >= 0.5 ? 1 : 0;
    p.confidence = p.label == 1 ? q : 1.0 - q;
    p.probs = {1.0 - q, q};
  } else {
    for (T v : out.storage()) p.probs.push_back(static_cast<double>(v));
    p.label = argmax_labels(out)[0];
    p.confidence = p.probs[static_cast<std::size_t>(p.label)];
  }
  return p;
}

}  // namespace agenet
