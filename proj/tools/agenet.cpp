// Command-line front end: dataset scanning and splitting, training and
// evaluation of the custom CNNs and transfer heads, feature-set handling,
// classical baselines, reports and loss plots.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <algorithm>
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "agenet/agenet.hpp"

namespace {

using namespace agenet;
namespace fs = std::filesystem;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  return os;
}

// ---------------------------------------------------------------------------
// Dataset access

struct DataArgs {
  std::string data;
  std::string manifest;
  std::uint64_t seed = 42;
};

void add_data_options(CLI::App* cmd, DataArgs& a, bool manifest) {
  cmd->add_option("--data", a.data, "UTKFace image directory")->envname("AGENET_DATA");
  if (manifest) cmd->add_option("--manifest", a.manifest, "split manifest; paths resolve against --data");
  cmd->add_option("--seed", a.seed, "split seed")->capture_default_str();
}

DatasetSplit load_split(const DataArgs& a) {
  if (!a.manifest.empty()) return read_manifest_file(a.manifest, a.data);
  if (a.data.empty()) throw UsageError("no dataset: pass --data DIR or set AGENET_DATA");
  const ScanResult scan = scan_directory(a.data);
  if (scan.records.empty()) throw DataError("no labelled images under '" + a.data + "'");
  return stratified_split(scan.records, {0.8, 0.1, 0.1}, a.seed);
}

void print_skips(std::ostream& os, const ScanResult& scan) {
  os << "records\t" << scan.records.size() << "\nskipped\t" << scan.skipped.size() << '\n';
  for (auto r : {SkipReason::missing_age, SkipReason::bad_age, SkipReason::bad_gender, SkipReason::bad_race,
                 SkipReason::malformed_name}) {
    std::string key = to_string(r);
    std::replace(key.begin(), key.end(), ' ', '_');
    if (const std::size_t n = scan.skip_count(r)) os << "skipped_" << key << '\t' << n << '\n';
  }
}

// ---------------------------------------------------------------------------
// Models

struct ModelArgs {
  std::string model = "custom";
  std::string conv = "separable";
  std::string init = "he_uniform";
  std::optional<double> max_norm;
  std::size_t input_side = 180;
};

bool is_custom(const std::string& model) { return model == "custom"; }

Init parse_init(const std::string& s) {
  for (auto i : {Init::he_uniform, Init::xavier_uniform})
    if (s == to_string(i)) return i;
  throw UsageError("unknown initializer '" + s + "' (he_uniform, xavier_uniform)");
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape_token(const std::string& s) {
  Shape out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, 'x')) out.push_back(std::stoul(part));
  if (out.empty()) throw CorruptFileError("bad shape '" + s + "'");
  return out;
}

ModelSpec custom_spec(Task task, const ModelArgs& m) {
  CustomCnnOptions o;
  o.input_side = m.input_side;
  if (m.conv == "standard") o.conv = ConvKind::standard;
  else if (m.conv != "separable") throw UsageError("unknown --conv '" + m.conv + "' (separable, standard)");
  o.init = parse_init(m.init);
  o.max_norm = m.max_norm;
  switch (task) {
    case Task::age_reg: return build_custom_age_estimator(o);
    case Task::age_cls: return build_custom_age_classifier(o);
    case Task::gender_cls: return build_custom_gender_classifier(o);
  }
  throw UsageError("unknown task");
}

HeadKind head_kind(const std::string& model) {
  try {
    return parse_head_kind(model);
  } catch (const std::invalid_argument&) {
    throw UsageError("unknown model '" + model + "' (custom, vgg_gender, resnet_gender, senet_gender, vgg_age, resnet_age, senet_age)");
  }
}

std::string default_extractor(HeadKind k) {
  const std::string name = to_string(k);
  if (name.rfind("vgg", 0) == 0) return "vgg_f";
  if (name.rfind("resnet", 0) == 0) return "resnet50_f";
  return "senet50_f";
}

Task head_task(HeadKind k) {
  return (k == HeadKind::vgg_gender || k == HeadKind::resnet_gender || k == HeadKind::senet_gender) ? Task::gender_cls
                                                                                                     : Task::age_reg;
}

/// Everything needed to rebuild a spec from a checkpoint.
CheckpointMeta describe_model(Task task, const ModelArgs& m, const ModelSpec& spec, const std::string& extractor) {
  CheckpointMeta meta{{"task", to_string(task)}, {"model", m.model}, {"input_shape", shape_token(spec.input_shape)}};
  if (is_custom(m.model)) {
    meta["conv"] = m.conv;
    meta["init"] = m.init;
    if (m.max_norm) meta["max_norm"] = std::to_string(*m.max_norm);
  } else {
    meta["extractor"] = extractor;
  }
  return meta;
}

ModelSpec spec_from_meta(const CheckpointMeta& meta) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw CorruptFileError("checkpoint lacks '" + k + "' metadata");
    return it->second;
  };
  const Task task = parse_task(get("task"));
  const std::string model = get("model");
  const Shape input = parse_shape_token(get("input_shape"));
  if (!is_custom(model)) return build_transfer_head(head_kind(model), input);
  ModelArgs m;
  m.model = model;
  m.conv = get("conv");
  m.init = get("init");
  if (meta.count("max_norm")) m.max_norm = std::stod(meta.at("max_norm"));
  m.input_side = input.at(0);
  return custom_spec(task, m);
}

struct LoadedModel {
  Network<float> net;
  CheckpointMeta meta;
  Task task;
};

LoadedModel open_checkpoint(const std::string& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  const ModelSpec spec = spec_from_meta(h.meta);
  CheckpointMeta meta;
  Network<float> net = load_checkpoint<float>(path, spec, &meta);
  return {std::move(net), meta, parse_task(meta.at("task"))};
}

// ---------------------------------------------------------------------------
// Feature sets

FeatureSet<float> load_feature_split(const std::string& dir, const std::string& extractor, SplitName s) {
  return load_features<float>((fs::path(dir) / feature_file_name(extractor, s)).string());
}

TensorSource<float> feature_source(const FeatureSet<float>& set, Task task) {
  return TensorSource<float>(set.features, raw_targets(records_from_keys(set), task));
}

// ---------------------------------------------------------------------------
// Verbs

int cmd_scan(const DataArgs& a, const std::string& out) {
  if (a.data.empty()) throw UsageError("scan needs --data DIR or AGENET_DATA");
  const ScanResult scan = scan_directory(a.data);
  std::ostringstream os;
  print_skips(os, scan);
  if (!scan.records.empty()) os << '\n' << format_composition(composition(stratified_split(scan.records, {0.8, 0.1, 0.1}, a.seed)));
  std::cout << os.str();
  if (!out.empty()) open_out(out) << os.str();
  return 0;
}

int cmd_split(const DataArgs& a, const std::string& out) {
  if (a.data.empty()) throw UsageError("split needs --data DIR or AGENET_DATA");
  const ScanResult scan = scan_directory(a.data);
  if (scan.records.empty()) throw DataError("no labelled images under '" + a.data + "'");
  const DatasetSplit split = stratified_split(scan.records, {0.8, 0.1, 0.1}, a.seed);
  {
    auto os = open_out(out);
    write_manifest(os, split, a.data);
  }
  print_skips(std::cout, scan);
  std::cout << "train\t" << split.train.size() << "\nvalidation\t" << split.validation.size() << "\ntest\t"
            << split.test.size() << "\nmanifest\t" << out << '\n';
  return 0;
}

struct TrainArgs {
  DataArgs data;
  ModelArgs model;
  std::string task = "age_reg";
  std::string features;
  std::string extractor;
  std::size_t batch = 0;
  std::size_t epochs = 40;
  std::string optimizer;
  double lr = 1e-3;
  double decay_factor = 0.6;
  std::size_t decay_every = 9;
  std::optional<std::size_t> halve_at;
  std::optional<bool> class_weights;
  std::string out = "run";
};

int cmd_train(const TrainArgs& a) {
  const bool custom = is_custom(a.model.model);
  Task task = parse_task(a.task);
  std::optional<HeadKind> head;
  if (!custom) {
    head = head_kind(a.model.model);
    task = head_task(*head);
  }

  RunConfig cfg;
  cfg.task = task;
  cfg.model = a.model.model;
  cfg.epochs = a.epochs;
  cfg.seed = a.data.seed;
  if (custom) {
    cfg.batch_size = a.batch ? a.batch : 32;
    cfg.optimizer = parse_optimizer(a.optimizer.empty() ? "adam" : a.optimizer);
    cfg.schedule = LrSchedule::step_decay(a.lr, a.decay_factor, a.decay_every);
    cfg.class_weights = a.class_weights.value_or(false);
  } else {
    cfg.batch_size = a.batch ? a.batch : (*head == HeadKind::vgg_gender ? 64 : 128);
    cfg.optimizer = parse_optimizer(a.optimizer.empty() ? "amsgrad" : a.optimizer);
    cfg.schedule = LrSchedule::halving(a.lr, a.halve_at.value_or(a.epochs * 3 / 4));
    cfg.class_weights = a.class_weights.value_or(task == Task::gender_cls);
  }
  cfg.validate();

  const fs::path out(a.out);
  cfg.checkpoint_path = (out / "model.ckpt").string();

  std::unique_ptr<SampleSource<float>> train_src, val_src;
  ModelSpec spec;
  std::string extractor;
  if (custom) {
    const DatasetSplit split = load_split(a.data);
    spec = custom_spec(task, a.model);
    train_src = std::make_unique<ImageSource<float>>(split.train, task, a.model.input_side);
    val_src = std::make_unique<ImageSource<float>>(split.validation, task, a.model.input_side);
  } else {
    if (a.features.empty()) throw UsageError("transfer heads train on --features DIR (see features-import / features-synth)");
    extractor = a.extractor.empty() ? default_extractor(*head) : a.extractor;
    const auto tr = load_feature_split(a.features, extractor, SplitName::train);
    const auto va = load_feature_split(a.features, extractor, SplitName::validation);
    spec = build_transfer_head(*head, tr.feature_shape());
    train_src = std::make_unique<TensorSource<float>>(feature_source(tr, task));
    val_src = std::make_unique<TensorSource<float>>(feature_source(va, task));
  }
  cfg.checkpoint_meta = describe_model(task, a.model, spec, extractor);

  fs::create_directories(out);
  Network<float> net(spec, cfg.seed);
  std::cerr << spec.name << ": " << net.parameter_count() << " parameters, " << train_src->size() << " train / "
            << val_src->size() << " validation samples, batch " << cfg.batch_size << ", " << to_string(cfg.optimizer) << '\n';
  cfg.on_epoch = [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << "  loss " << e.train_loss << "  val_loss " << e.val_loss << "  val_metric "
              << e.val_metric << "  lr " << e.lr << '\n';
  };
  const RunHistory h = train(net, *train_src, val_src->size() ? val_src.get() : nullptr, cfg);
  {
    auto os = open_out(out / "history.csv");
    write_history_csv(os, h);
  }
  std::cout << "best_epoch\t" << h.best_epoch << "\nhistory\t" << (out / "history.csv").string() << "\ncheckpoint\t"
            << *cfg.checkpoint_path << '\n';
  return 0;
}

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  std::string split = "test";
  std::string features;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  LoadedModel m = open_checkpoint(a.checkpoint);
  const SplitName which = parse_split(a.split);
  std::unique_ptr<SampleSource<float>> src;
  if (m.meta.at("model") == "custom") {
    const DatasetSplit split = load_split(a.data);
    src = std::make_unique<ImageSource<float>>(split.get(which), m.task, m.net.spec().input_shape.at(0));
  } else {
    if (a.features.empty()) throw UsageError("evaluating a transfer head needs --features DIR");
    src = std::make_unique<TensorSource<float>>(feature_source(load_feature_split(a.features, m.meta.at("extractor"), which), m.task));
  }
  const EvalReport rep = evaluate(m.net, *src, m.task);
  std::ostringstream os;
  os << "split\t" << to_string(which) << '\n';
  write_eval_report(os, rep);
  std::cout << os.str();
  if (!a.out.empty()) open_out(a.out) << os.str();
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string features;
  std::size_t row = 0;
};

int cmd_predict(const PredictArgs& a) {
  LoadedModel m = open_checkpoint(a.checkpoint);
  Tensor<float> sample;
  std::string what;
  if (!a.image.empty()) {
    if (m.meta.at("model") != "custom") throw UsageError("transfer heads take --features FILE --row N, not images");
    sample = prepare_image<float>(a.image, m.net.spec().input_shape.at(0));
    what = a.image;
  } else if (!a.features.empty()) {
    const FeatureSet<float> set = load_features<float>(a.features);
    if (a.row >= set.size()) throw UsageError("--row " + std::to_string(a.row) + " outside " + std::to_string(set.size()) + " rows");
    const std::size_t per = set.features.size() / set.size();
    sample = Tensor<float>(set.feature_shape(), std::vector<float>(set.features.data() + a.row * per,
                                                                   set.features.data() + (a.row + 1) * per));
    what = set.keys[a.row];
  } else {
    throw UsageError("predict needs --image PATH or --features FILE");
  }
  const Prediction p = predict_one(m.net, m.task, sample);
  std::cout << "input\t" << what << '\n';
  switch (m.task) {
    case Task::age_reg: std::cout << "age\t" << p.age << '\n'; break;
    case Task::gender_cls:
      std::cout << "gender\t" << (p.label == 1 ? "female" : "male") << "\nlabel\t" << p.label << "\nconfidence\t"
                << p.confidence << '\n';
      break;
    case Task::age_cls: {
      static const char* groups[5] = {"0-24", "25-49", "50-74", "75-99", "100-124"};
      std::cout << "age_group\t" << groups[p.label] << "\nlabel\t" << p.label << "\nconfidence\t" << p.confidence << '\n';
      for (std::size_t i = 0; i < p.probs.size(); ++i) std::cout << "p_" << groups[i] << '\t' << p.probs[i] << '\n';
      break;
    }
  }
  return 0;
}

struct ImportArgs {
  std::string npy;
  std::string keys;
  std::string extractor;
  std::string split;
  std::string out;
};

int cmd_features_import(const ImportArgs& a) {
  FeatureSet<float> set;
  set.extractor = a.extractor;
  set.split = parse_split(a.split);
  set.features = npy::load<float>(a.npy);
  std::ifstream ks(a.keys);
  if (!ks) throw DataError("cannot open key list '" + a.keys + "'");
  for (std::string line; std::getline(ks, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) set.keys.push_back(line);
  }
  set.validate();
  records_from_keys(set);  // every key must carry a label
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / feature_file_name(set.extractor, set.split);
  save_features(set, path.string());
  std::cout << "wrote\t" << path.string() << "\nrows\t" << set.size() << "\nfeature_shape\t" << shape_str(set.feature_shape()) << '\n';
  return 0;
}

int cmd_features_synth(const SynthConfig& c, const std::string& out) {
  const auto bundle = synth_features<float>(c);
  fs::create_directories(out);
  for (const auto& s : bundle.sets) save_features(s, (fs::path(out) / feature_file_name(s.extractor, s.split)).string());
  {
    auto os = open_out(fs::path(out) / "planted.csv");
    os << std::setprecision(17) << "name,value\nage_bias," << bundle.truth.age_bias << '\n';
    for (std::size_t j = 0; j < bundle.truth.age_weights.size(); ++j) os << "age_w" << j << ',' << bundle.truth.age_weights[j] << '\n';
    for (std::size_t j = 0; j < bundle.truth.gender_weights.size(); ++j)
      os << "gender_w" << j << ',' << bundle.truth.gender_weights[j] << '\n';
  }
  std::cout << "sets\t" << bundle.sets.size() << "\ntrain\t" << bundle.split.train.size() << "\nvalidation\t"
            << bundle.split.validation.size() << "\ntest\t" << bundle.split.test.size() << "\ndir\t" << out << '\n';
  return 0;
}

struct BaselineArgs {
  std::string features;
  std::string extractor = "senet50_f";
  std::string task = "age_reg";
  double lr = 0.01;
  std::size_t epochs = 500;
  bool class_weights = false;
  std::string out;
};

int cmd_baseline(const BaselineArgs& a) {
  const Task task = parse_task(a.task);
  if (task == Task::age_cls) throw UsageError("baselines cover age_reg and gender_cls");
  const auto tr = load_feature_split(a.features, a.extractor, SplitName::train);
  const auto te = load_feature_split(a.features, a.extractor, SplitName::test);
  const auto ytr = raw_targets(records_from_keys(tr), task), yte = raw_targets(records_from_keys(te), task);
  BaselineRow row;
  LinearModel model;
  if (task == Task::age_reg) {
    row.method = "Linear Regression";
    model = linreg_fit(tr.features, ytr);
  } else {
    row.method = "Logistic Regression";
    LogregConfig cfg{a.lr, a.epochs, std::nullopt};
    if (a.class_weights) {
      std::map<int, std::size_t> counts;
      for (double y : ytr) ++counts[static_cast<int>(y)];
      cfg.class_weights = balanced_class_weights(counts);
    }
    model = logreg_fit(tr.features, ytr, cfg);
  }
  row.train_metric = baseline_eval(model, tr.features, ytr).value;
  row.test_metric = baseline_eval(model, te.features, yte).value;
  std::ostringstream os;
  write_baseline_report(os, {row}, task == Task::age_reg ? "mae" : "accuracy");
  std::cout << os.str();
  if (!a.out.empty()) open_out(a.out) << os.str();
  return 0;
}

int cmd_report(const std::string& manifest, const std::string& data, const std::vector<std::string>& histories,
               const std::string& out) {
  if (manifest.empty() && histories.empty()) throw UsageError("report needs --manifest and/or --history");
  std::ostringstream os;
  if (!manifest.empty()) os << format_composition(composition(read_manifest_file(manifest, data)));
  if (!histories.empty()) {
    if (!manifest.empty()) os << '\n';
    os << "Minimum loss value\nrun\ttrain_loss\tval_loss\tbest_epoch\tval_metric\n";
    for (const auto& path : histories) {
      std::ifstream is(path);
      if (!is) throw DataError("cannot open history '" + path + "'");
      const RunHistory h = read_history_csv(is);
      if (h.epochs.empty()) throw DataError("history '" + path + "' has no epochs");
      double min_train = INFINITY;
      const EpochRecord* best = &h.epochs.front();
      for (const auto& e : h.epochs) {
        min_train = std::min(min_train, e.train_loss);
        if (e.val_loss < best->val_loss) best = &e;
      }
      os << path << '\t' << min_train << '\t' << best->val_loss << '\t' << best->epoch << '\t' << best->val_metric << '\n';
    }
  }
  std::cout << os.str();
  if (!out.empty()) open_out(out) << os.str();
  return 0;
}

int cmd_plot(const std::string& history, const std::string& out, const std::string& title, const std::string& column) {
  std::ifstream is(history);
  if (!is) throw DataError("cannot open history '" + history + "'");
  const RunHistory h = read_history_csv(is);
  if (h.epochs.empty()) throw DataError("history '" + history + "' has no epochs");
  Series tr{"training", "#1f77b4", {}, {}}, va{"validation", "#d62728", {}, {}};
  for (const auto& e : h.epochs) {
    tr.x.push_back(static_cast<double>(e.epoch));
    va.x.push_back(static_cast<double>(e.epoch));
    if (column == "loss") {
      tr.y.push_back(e.train_loss);
      va.y.push_back(e.val_loss);
    } else {
      va.y.push_back(e.val_metric);
    }
  }
  std::vector<Series> series;
  if (column == "loss") series.push_back(std::move(tr));
  else if (column != "metric") throw UsageError("--series must be loss or metric");
  series.push_back(std::move(va));
  ChartOptions opt;
  opt.title = title.empty() ? fs::path(history).stem().string() : title;
  opt.y_label = column == "loss" ? "loss" : "validation metric";
  {
    auto os = open_out(out);
    write_line_chart(os, series, opt);
  }
  std::cout << "wrote\t" << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Age and gender estimation from face images"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  DataArgs data;
  std::string out;

  auto* scan = app.add_subcommand("scan", "Parse filenames, report skipped files and split composition");
  add_data_options(scan, data, false);
  scan->add_option("--out", out, "also write the report here");

  auto* split = app.add_subcommand("split", "Stratified 80/10/10 split written as a manifest");
  add_data_options(split, data, false);
  std::string manifest_out = "manifest.csv";
  split->add_option("--out", manifest_out, "manifest path")->capture_default_str();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a custom CNN on images or a transfer head on features");
  add_data_options(trn, ta.data, true);
  trn->add_option("--task", ta.task, "age_reg, age_cls or gender_cls (custom model only)")->capture_default_str();
  trn->add_option("--model", ta.model.model, "custom or a transfer head name")->capture_default_str();
  trn->add_option("--conv", ta.model.conv, "custom conv layers: separable or standard")->capture_default_str();
  trn->add_option("--init", ta.model.init, "custom init: he_uniform or xavier_uniform")->capture_default_str();
  trn->add_option("--max-norm", ta.model.max_norm, "max-norm constraint on custom conv/dense kernels");
  trn->add_option("--input-side", ta.model.input_side, "custom model input side (images are resized)")->capture_default_str();
  trn->add_option("--features", ta.features, "feature directory for transfer heads");
  trn->add_option("--extractor", ta.extractor, "feature extractor (default follows the head)");
  trn->add_option("--batch", ta.batch, "batch size (default 32 custom, 64 vgg_gender, 128 other heads)");
  trn->add_option("--epochs", ta.epochs, "epochs")->capture_default_str()->check(CLI::PositiveNumber);
  trn->add_option("--optimizer", ta.optimizer, "sgd, sgd_momentum, adam, amsgrad, adamax, nadam (default adam custom, amsgrad heads)");
  trn->add_option("--lr", ta.lr, "initial learning rate")->capture_default_str();
  trn->add_option("--decay-factor", ta.decay_factor, "custom step decay factor")->capture_default_str();
  trn->add_option("--decay-every", ta.decay_every, "custom step decay period in epochs")->capture_default_str();
  trn->add_option("--halve-at", ta.halve_at, "heads: epoch at which the rate is halved (default 3/4 of --epochs)");
  trn->add_option("--class-weights", ta.class_weights, "balanced class weights (default on for gender heads)");
  trn->add_option("--out", ta.out, "run directory for history.csv and model.ckpt")->capture_default_str();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  add_data_options(evl, ea.data, true);
  evl->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  evl->add_option("--split", ea.split, "train, validation or test")->capture_default_str();
  evl->add_option("--features", ea.features, "feature directory for transfer heads");
  evl->add_option("--out", ea.out, "also write the report here");

  PredictArgs pa;
  auto* prd = app.add_subcommand("predict", "Predict from one image or one feature row");
  prd->add_option("--checkpoint", pa.checkpoint, "checkpoint file")->required();
  prd->add_option("--image", pa.image, "face image (custom models)");
  prd->add_option("--features", pa.features, "feature file (transfer heads)");
  prd->add_option("--row", pa.row, "row of --features")->capture_default_str();

  ImportArgs ia;
  auto* imp = app.add_subcommand("features-import", "Convert an externally computed .npy embedding array");
  imp->add_option("--npy", ia.npy, ".npy array, one row per image")->required();
  imp->add_option("--keys", ia.keys, "image paths, one per line, in row order")->required();
  imp->add_option("--extractor", ia.extractor, "vgg_f, resnet50_f or senet50_f")->required()->check(CLI::IsMember(known_extractors()));
  imp->add_option("--split", ia.split, "train, validation or test")->required()->check(CLI::IsMember({"train", "validation", "test"}));
  imp->add_option("--out", ia.out, "feature directory")->required();

  SynthConfig sc;
  std::string synth_out = "features";
  auto* syn = app.add_subcommand("features-synth", "Write planted-signal feature sets for all extractors and splits");
  syn->add_option("--out", synth_out, "feature directory")->capture_default_str();
  syn->add_option("--samples", sc.samples, "records")->capture_default_str();
  syn->add_option("--dim", sc.dim, "feature width (multiple of 16)")->capture_default_str();
  syn->add_option("--rank", sc.latent_rank, "latent rank")->capture_default_str();
  syn->add_option("--noise", sc.noise, "isotropic feature noise")->capture_default_str();
  syn->add_option("--seed", sc.seed, "generator seed")->capture_default_str();

  BaselineArgs ba;
  auto* bas = app.add_subcommand("baseline", "Linear or logistic regression on a feature set");
  bas->add_option("--features", ba.features, "feature directory")->required();
  bas->add_option("--extractor", ba.extractor, "feature extractor")->capture_default_str();
  bas->add_option("--task", ba.task, "age_reg (linear) or gender_cls (logistic)")->capture_default_str();
  bas->add_option("--lr", ba.lr, "logistic step size")->capture_default_str();
  bas->add_option("--epochs", ba.epochs, "logistic iterations")->capture_default_str();
  bas->add_flag("--class-weights", ba.class_weights, "balanced class weights for the logistic fit");
  bas->add_option("--out", ba.out, "also write the CSV here");

  std::string rep_manifest, rep_data, rep_out;
  std::vector<std::string> rep_histories;
  auto* rep = app.add_subcommand("report", "Composition tables from a manifest and minimum-loss rows from histories");
  rep->add_option("--manifest", rep_manifest, "split manifest");
  rep->add_option("--data", rep_data, "root for manifest paths")->envname("AGENET_DATA");
  rep->add_option("--history", rep_histories, "history CSV (repeatable)");
  rep->add_option("--out", rep_out, "also write the report here");

  std::string plot_history, plot_out = "loss.svg", plot_title, plot_series = "loss";
  auto* plt = app.add_subcommand("plot", "Training and validation curves from a history CSV as SVG");
  plt->add_option("--history", plot_history, "history CSV")->required();
  plt->add_option("--out", plot_out, "SVG path")->capture_default_str();
  plt->add_option("--title", plot_title, "chart title");
  plt->add_option("--series", plot_series, "loss or metric")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (scan->parsed()) return cmd_scan(data, out);
    if (split->parsed()) return cmd_split(data, manifest_out);
    if (trn->parsed()) return cmd_train(ta);
    if (evl->parsed()) return cmd_eval(ea);
    if (prd->parsed()) return cmd_predict(pa);
    if (imp->parsed()) return cmd_features_import(ia);
    if (syn->parsed()) return cmd_features_synth(sc, synth_out);
    if (bas->parsed()) return cmd_baseline(ba);
    if (rep->parsed()) return cmd_report(rep_manifest, rep_data, rep_histories, rep_out);
    if (plt->parsed()) return cmd_plot(plot_history, plot_out, plot_title, plot_series);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
