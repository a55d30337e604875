#pragma once

// Precomputed backbone embeddings: storage, record alignment and a
// synthetic generator with planted linear age and gender signal.
//
// On disk a feature set is an FTNS tensor [n, feature dims...] at `path`
// plus a sidecar `path.keys`:
//
//   # extractor=<name> split=<train|validation|test>
//   <key of row 0>
//   <key of row 1>
//   ...

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "agenet/data.hpp"
#include "agenet/error.hpp"
#include "agenet/ftns.hpp"
#include "agenet/ops.hpp"
#include "agenet/rng.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

inline const std::vector<std::string>& known_extractors() {
  static const std::vector<std::string> names{"vgg_f", "resnet50_f", "senet50_f"};
  return names;
}

template <typename T>
struct FeatureSet {
  std::string extractor;
  SplitName split = SplitName::train;
  Tensor<T> features;  // [n, feature dims...]
  std::vector<std::string> keys;

  std::size_t size() const { return keys.size(); }

  Shape feature_shape() const {
    const Shape& s = features.shape();
    return s.empty() ? Shape{} : Shape(s.begin() + 1, s.end());
  }

  void validate() const {
    if (features.rank() < 2) throw ShapeError("feature set: features need [n, dims...], got " + shape_str(features.shape()));
    if (features.dim(0) != keys.size()) {
      throw DataError("feature set: " + std::to_string(keys.size()) + " keys for " + std::to_string(features.dim(0)) + " rows");
    }
    std::set<std::string> seen;
    for (const auto& k : keys) {
      if (k.empty() || k.find('\n') != std::string::npos) throw DataError("feature set: empty or multi-line key");
      if (!seen.insert(k).second) throw DataError("feature set: duplicate key '" + k + "'");
    }
  }
};

inline std::string feature_file_name(const std::string& extractor, SplitName split) {
  return extractor + "_" + to_string(split) + ".ftns";
}

inline std::string keys_path(const std::string& path) { return path + ".keys"; }

template <typename T>
void save_features(const FeatureSet<T>& set, const std::string& path) {
  set.validate();
  if (set.extractor.find_first_of(" \n") != std::string::npos) throw std::invalid_argument("extractor name contains whitespace");
  ftns::save(path, set.features);
  std::ofstream os(keys_path(path));
  if (!os) throw std::runtime_error("cannot open '" + keys_path(path) + "' for writing");
  os << "# extractor=" << set.extractor << " split=" << to_string(set.split) << '\n';
  for (const auto& k : set.keys) os << k << '\n';
  if (!os) throw std::runtime_error("write to '" + keys_path(path) + "' failed");
}

template <typename T>
FeatureSet<T> load_features(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw std::runtime_error("cannot open '" + path + "'");
  FeatureSet<T> set;
  set.features = ftns::read<T>(fs);
  std::ifstream ks(keys_path(path));
  if (!ks) throw CorruptFileError("feature set '" + path + "': key index '" + keys_path(path) + "' missing");
  std::string line;
  if (!std::getline(ks, line) || line.rfind("# ", 0) != 0) throw CorruptFileError("feature set '" + path + "': missing key header");
  {
    std::istringstream hs(line.substr(2));
    std::string field;
    bool have_ex = false, have_split = false;
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = field.substr(0, eq), v = field.substr(eq + 1);
      if (k == "extractor") {
        set.extractor = v;
        have_ex = true;
      } else if (k == "split") {
        try {
          set.split = parse_split(v);
        } catch (const std::exception&) {
          throw CorruptFileError("feature set '" + path + "': unknown split '" + v + "'");
        }
        have_split = true;
      }
    }
    if (!have_ex || !have_split) throw CorruptFileError("feature set '" + path + "': header lacks extractor or split");
  }
  while (std::getline(ks, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) set.keys.push_back(line);
  }
  if (set.features.rank() < 2 || set.features.dim(0) != set.keys.size()) {
    throw CorruptFileError("feature set '" + path + "': " + std::to_string(set.keys.size()) + " keys for tensor " +
                           shape_str(set.features.shape()));
  }
  try {
    set.validate();
  } catch (const DataError& e) {
    throw CorruptFileError("feature set '" + path + "': " + e.what());
  }
  return set;
}

/// Rows of `set` reordered to follow `records`. Keys match a record by full
/// path or, failing that, by file name.
template <typename T>
Tensor<T> align(const FeatureSet<T>& set, const std::vector<FaceRecord>& records) {
  std::unordered_map<std::string, std::size_t> by_key, by_name;
  for (std::size_t i = 0; i < set.keys.size(); ++i) {
    by_key.emplace(set.keys[i], i);
    by_name.emplace(std::filesystem::path(set.keys[i]).filename().string(), i);
  }
  const Shape fs = set.feature_shape();
  const std::size_t per = numel(fs);
  Shape out_shape{records.size()};
  out_shape.insert(out_shape.end(), fs.begin(), fs.end());
  std::vector<T> out;
  out.reserve(records.size() * per);
  std::vector<std::string> missing;
  for (const auto& r : records) {
    std::size_t row_index = 0;
    if (auto it = by_key.find(r.image_path); it != by_key.end()) {
      row_index = it->second;
    } else if (auto jt = by_name.find(std::filesystem::path(r.image_path).filename().string()); jt != by_name.end()) {
      row_index = jt->second;
    } else {
      missing.push_back(r.image_path);
      continue;
    }
    const T* row = set.features.data() + row_index * per;
    out.insert(out.end(), row, row + per);
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " record(s) have no features in " + set.extractor + "/" +
                      to_string(set.split) + ":";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ...";
    throw DataError(msg);
  }
  return Tensor<T>(out_shape, std::move(out));
}

/// Records for the keys of a feature set, labels parsed from the file names.
template <typename T>
std::vector<FaceRecord> records_from_keys(const FeatureSet<T>& set) {
  std::vector<FaceRecord> out;
  out.reserve(set.keys.size());
  for (const auto& k : set.keys) {
    auto parsed = parse_label(k);
    if (auto* skip = std::get_if<Skip>(&parsed)) {
      throw DataError("feature key '" + k + "' carries no usable label (" + to_string(skip->reason) + ")");
    }
    out.push_back(std::get<FaceRecord>(parsed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic features

struct SynthConfig {
  std::size_t samples = 4000;
  std::size_t dim = 64;          // multiple of 16 so vgg_f can be a 4x4 map
  std::size_t latent_rank = 8;
  double noise = 0.5;            // isotropic noise on top of the low-rank part
  double age_mean = 40;
  double age_sd = 15;            // sd of the noiseless planted age
  double gender_logit_sd = 3;
  std::uint64_t seed = 42;
};

/// The generating rule, expressed over the senet50_f features.
struct PlantedTruth {
  std::vector<double> age_weights;
  double age_bias = 0;
  std::vector<double> gender_weights;
};

template <typename T>
struct SynthBundle {
  DatasetSplit split;
  std::vector<FeatureSet<T>> sets;  // every extractor x every split
  PlantedTruth truth;

  const FeatureSet<T>& get(const std::string& extractor, SplitName s) const {
    for (const auto& f : sets)
      if (f.extractor == extractor && f.split == s) return f;
    throw std::out_of_range("no synthetic set " + extractor + "/" + to_string(s));
  }
};

namespace detail {

inline std::vector<double> gaussian_matrix(Rng rng, std::size_t rows, std::size_t cols, double sd) {
  std::vector<double> m(rows * cols);
  for (auto& v : m) v = rng.normal() * sd;
  return m;
}

/// Scales w so that sqrt(w' S w) = target, S = A'A + noise^2 I with A [r x d].
inline void scale_to_sd(std::vector<double>& w, const std::vector<double>& a, std::size_t r, std::size_t d, double noise,
                        double target) {
  double var = 0;
  for (std::size_t k = 0; k < r; ++k) {
    double proj = 0;
    for (std::size_t j = 0; j < d; ++j) proj += a[k * d + j] * w[j];
    var += proj * proj;
  }
  for (double v : w) var += noise * noise * v * v;
  const double s = target / std::sqrt(var);
  for (double& v : w) v *= s;
}

}  // namespace detail

/// Draws `samples` faces whose senet50_f features are x = A'z + noise*e with
/// z ~ N(0, I_r); age = round(mean + x.w) (redrawn outside [0,116]) and
/// gender ~ Bernoulli(sigmoid(x.u)). resnet50_f and vgg_f are random linear
/// mixes of x with extra noise, vgg_f reshaped to a 4 x 4 x (dim/16) map.
/// Keys are UTKFace-style file names so labels round-trip through parse_label.
template <typename T>
SynthBundle<T> synth_features(const SynthConfig& c) {
  if (c.samples < 10) throw std::invalid_argument("synth_features: need at least 10 samples");
  if (c.dim == 0 || c.dim % 16 != 0) throw std::invalid_argument("synth_features: dim must be a positive multiple of 16");
  if (c.latent_rank == 0) throw std::invalid_argument("synth_features: latent_rank must be positive");
  const std::size_t n = c.samples, d = c.dim, r = c.latent_rank;
  const Rng root(c.seed);
  const auto a = detail::gaussian_matrix(root.split(1), r, d, 1.0 / std::sqrt(static_cast<double>(r)));
  PlantedTruth truth;
  truth.age_bias = c.age_mean;
  truth.age_weights = detail::gaussian_matrix(root.split(2), 1, d, 1.0);
  truth.gender_weights = detail::gaussian_matrix(root.split(3), 1, d, 1.0);
  detail::scale_to_sd(truth.age_weights, a, r, d, c.noise, c.age_sd);
  detail::scale_to_sd(truth.gender_weights, a, r, d, c.noise, c.gender_logit_sd);

  std::vector<double> x(n * d);
  std::vector<FaceRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(1000 + i);
    double* xi = x.data() + i * d;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw NumericError("synth_features: cannot draw an age inside [0,116]");
      std::vector<double> z(r);
      for (auto& v : z) v = rng.normal();
      for (std::size_t j = 0; j < d; ++j) {
        double s = c.noise * rng.normal();
        for (std::size_t k = 0; k < r; ++k) s += z[k] * a[k * d + j];
        xi[j] = s;
      }
      double age = c.age_mean;
      for (std::size_t j = 0; j < d; ++j) age += xi[j] * truth.age_weights[j];
      const long rounded = std::lround(age);
      if (rounded < 0 || rounded > kMaxAge) continue;
      double logit = 0;
      for (std::size_t j = 0; j < d; ++j) logit += xi[j] * truth.gender_weights[j];
      FaceRecord& rec = records[i];
      rec.age = static_cast<int>(rounded);
      rec.gender = rng.bernoulli(stable_sigmoid(logit)) ? 1 : 0;
      rec.race = static_cast<int>(rng.below(5));
      char name[64];
      std::snprintf(name, sizeof name, "%d_%d_%d_synth%06zu.jpg", rec.age, rec.gender, rec.race, i);
      rec.image_path = name;
      break;
    }
  }

  // Per-extractor views: senet50_f is x itself; the others mix and add noise.
  struct View {
    std::string name;
    double extra_noise;
  };
  const View views[3] = {{"vgg_f", 0.6}, {"resnet50_f", 0.3}, {"senet50_f", 0.0}};
  std::map<std::string, std::vector<double>> feats;
  for (std::size_t v = 0; v < 3; ++v) {
    if (views[v].extra_noise == 0) {
      feats[views[v].name] = x;
      continue;
    }
    const auto mix = detail::gaussian_matrix(root.split(10 + v), d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = root.split(1'000'000 * (v + 1) + i);
      for (std::size_t j = 0; j < d; ++j) {
        double s = views[v].extra_noise * rng.normal();
        for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * mix[k * d + j];
        out[i * d + j] = s;
      }
    }
    feats[views[v].name] = std::move(out);
  }

  SynthBundle<T> bundle;
  bundle.truth = std::move(truth);
  bundle.split = stratified_split(records, {0.8, 0.1, 0.1}, c.seed);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < n; ++i) row_of.emplace(records[i].image_path, i);
  for (const auto& view : views) {
    const auto& src = feats.at(view.name);
    for (SplitName s : {SplitName::train, SplitName::validation, SplitName::test}) {
      const auto& part = bundle.split.get(s);
      FeatureSet<T> set;
      set.extractor = view.name;
      set.split = s;
      Shape shape = view.name == "vgg_f" ? Shape{part.size(), 4, 4, d / 16} : Shape{part.size(), d};
      std::vector<T> data;
      data.reserve(part.size() * d);
      for (const auto& rec : part) {
        const std::size_t row = row_of.at(rec.image_path);
        for (std::size_t j = 0; j < d; ++j) data.push_back(static_cast<T>(src[row * d + j]));
        set.keys.push_back(rec.image_path);
      }
      set.features = Tensor<T>(shape, std::move(data));
      bundle.sets.push_back(std::move(set));
    }
  }
  return bundle;
}

}  // namespace agenet
