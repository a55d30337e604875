#pragma once

// Face dataset records: filename label parsing, stratified splitting, label
// encodings, split manifests and composition reports.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "agenet/error.hpp"
#include "agenet/rng.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

enum class Gender { male = 0, female = 1 };

inline constexpr int kMaxAge = 116;
inline constexpr int kAgeClasses = 5;
inline constexpr std::size_t kAgeBuckets = 11;

struct FaceRecord {
  std::string image_path;
  int age = 0;
  int gender = 0;  // 0 male, 1 female
  int race = 0;    // 0..4, parsed but unused downstream

  friend bool operator==(const FaceRecord&, const FaceRecord&) = default;
};

enum class SkipReason { missing_age, bad_age, bad_gender, bad_race, malformed_name };

inline const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::missing_age: return "missing age";
    case SkipReason::bad_age: return "age out of range";
    case SkipReason::bad_gender: return "missing or invalid gender";
    case SkipReason::bad_race: return "missing or invalid race";
    case SkipReason::malformed_name: return "malformed file name";
  }
  return "?";
}

struct Skip {
  std::string image_path;
  SkipReason reason;
};

using LabelParse = std::variant<FaceRecord, Skip>;

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace detail

/// Parses `<age>_<gender>_<race>_<rest>.<ext>`. Never throws on bad names;
/// returns a Skip carrying the reason instead.
inline LabelParse parse_label(const std::string& path) {
  const std::string name = std::filesystem::path(path).filename().string();
  std::vector<std::string_view> fields;
  std::string_view rest(name);
  while (fields.size() < 3) {
    const auto pos = rest.find('_');
    if (pos == std::string_view::npos) {
      // Last field may end in the extension: "25_0_1.jpg"
      const auto dot = rest.find('.');
      fields.push_back(rest.substr(0, dot));
      rest = {};
      break;
    }
    fields.push_back(rest.substr(0, pos));
    rest.remove_prefix(pos + 1);
  }
  if (fields.empty()) return Skip{path, SkipReason::malformed_name};
  int age = 0, gender = 0, race = 0;
  if (fields[0].empty()) return Skip{path, SkipReason::missing_age};
  if (!detail::parse_int(fields[0], age)) return Skip{path, SkipReason::missing_age};
  if (age < 0 || age > kMaxAge) return Skip{path, SkipReason::bad_age};
  if (fields.size() < 2 || !detail::parse_int(fields[1], gender) || (gender != 0 && gender != 1)) {
    return Skip{path, SkipReason::bad_gender};
  }
  if (fields.size() < 3 || !detail::parse_int(fields[2], race) || race < 0 || race > 4) {
    return Skip{path, SkipReason::bad_race};
  }
  return FaceRecord{path, age, gender, race};
}

struct ScanResult {
  std::vector<FaceRecord> records;
  std::vector<Skip> skipped;

  std::size_t skip_count(SkipReason r) const {
    return static_cast<std::size_t>(std::count_if(skipped.begin(), skipped.end(), [r](const Skip& s) { return s.reason == r; }));
  }
};

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".png";
}

/// Parses every image file in a flat directory. Output is sorted by path so
/// downstream splits do not depend on directory iteration order.
inline ScanResult scan_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<std::string> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  ScanResult out;
  for (const auto& p : paths) {
    auto parsed = parse_label(p);
    if (auto* r = std::get_if<FaceRecord>(&parsed)) {
      out.records.push_back(std::move(*r));
    } else {
      out.skipped.push_back(std::get<Skip>(std::move(parsed)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label encodings

/// Age group for the 5-way classifier: floor(age / 25).
inline int age_to_class(int age) {
  if (age < 0 || age > 124) throw std::out_of_range("age_to_class: age " + std::to_string(age) + " outside [0,124]");
  return age / 25;
}

/// Composition bucket: 0-10, 11-20, ..., 91-100, 101-116.
inline std::size_t age_bucket(int age) {
  if (age < 0) throw std::out_of_range("negative age");
  if (age <= 10) return 0;
  return std::min<std::size_t>(static_cast<std::size_t>((age - 1) / 10), kAgeBuckets - 1);
}

inline std::string age_bucket_label(std::size_t b) {
  if (b == 0) return "0-10";
  if (b == kAgeBuckets - 1) return "101-116";
  return std::to_string(b * 10 + 1) + "-" + std::to_string(b * 10 + 10);
}

template <typename T>
Tensor<T> one_hot(int label, int k) {
  if (k <= 0 || label < 0 || label >= k) {
    throw std::out_of_range("one_hot: label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
  }
  Tensor<T> t(Shape{static_cast<std::size_t>(k)}, T{0});
  t[static_cast<std::size_t>(label)] = T{1};
  return t;
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitName { train, validation, test };

inline const char* to_string(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::validation: return "validation";
    case SplitName::test: return "test";
  }
  return "?";
}

inline SplitName parse_split(const std::string& s) {
  if (s == "train") return SplitName::train;
  if (s == "validation" || s == "val") return SplitName::validation;
  if (s == "test") return SplitName::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct DatasetSplit {
  std::vector<FaceRecord> train;
  std::vector<FaceRecord> validation;
  std::vector<FaceRecord> test;
  std::uint64_t seed = 0;

  const std::vector<FaceRecord>& get(SplitName s) const {
    switch (s) {
      case SplitName::train: return train;
      case SplitName::validation: return validation;
      case SplitName::test: return test;
    }
    throw std::invalid_argument("bad split");
  }
  std::size_t total() const { return train.size() + validation.size() + test.size(); }
};

/// Stratum key: gender x age bucket.
inline std::size_t stratum_of(const FaceRecord& r) { return static_cast<std::size_t>(r.gender) * kAgeBuckets + age_bucket(r.age); }

namespace detail {

/// Adds `deficit` units one at a time to the strata with the largest fractional
/// remainders, skipping strata with no room; ties go to the lower stratum key.
inline void distribute_remainder(std::vector<std::size_t>& alloc, const std::vector<double>& ideal,
                                 const std::vector<std::size_t>& room, std::size_t deficit) {
  std::vector<std::size_t> order(alloc.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
  });
  std::vector<std::size_t> used(alloc.size(), 0);
  while (deficit > 0) {
    bool progressed = false;
    for (std::size_t s : order) {
      if (deficit == 0) break;
      if (used[s] < room[s]) {
        ++alloc[s];
        ++used[s];
        --deficit;
        progressed = true;
      }
    }
    if (!progressed) throw std::logic_error("stratified split: cannot place remainder");
  }
}

}  // namespace detail

/// Proportional allocation per (gender x age bucket) stratum with a seeded
/// shuffle inside each stratum. Global sizes are floor(r_train*n),
/// floor(r_val*n) and the remainder, distributed over strata by largest
/// remainder so that every stratum's shares stay within one record of ideal.
inline DatasetSplit stratified_split(std::vector<FaceRecord> records, std::array<double, 3> ratios = {0.8, 0.1, 0.1},
                                     std::uint64_t seed = 42) {
  if (records.empty()) throw DataError("stratified_split: no records");
  if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || ratios[0] + ratios[1] + ratios[2] > 1.0 + 1e-9) {
    throw std::invalid_argument("stratified_split: ratios must be non-negative and sum to at most 1");
  }
  std::sort(records.begin(), records.end(), [](const FaceRecord& a, const FaceRecord& b) { return a.image_path < b.image_path; });

  const std::size_t n = records.size();
  const std::size_t n_strata = 2 * kAgeBuckets;
  std::vector<std::vector<FaceRecord>> strata(n_strata);
  for (auto& r : records) strata[stratum_of(r)].push_back(std::move(r));

  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));

  std::vector<std::size_t> train(n_strata), val(n_strata), room(n_strata);
  std::vector<double> ideal_train(n_strata), ideal_val(n_strata);
  std::size_t placed = 0;
  for (std::size_t s = 0; s < n_strata; ++s) {
    const double sz = static_cast<double>(strata[s].size());
    ideal_train[s] = sz * static_cast<double>(n_train) / static_cast<double>(n);
    train[s] = static_cast<std::size_t>(std::floor(ideal_train[s]));
    placed += train[s];
    room[s] = strata[s].size() - train[s];
  }
  detail::distribute_remainder(train, ideal_train, room, n_train - placed);

  placed = 0;
  for (std::size_t s = 0; s < n_strata; ++s) {
    const double sz = static_cast<double>(strata[s].size());
    ideal_val[s] = sz * static_cast<double>(n_val) / static_cast<double>(n);
    val[s] = std::min(static_cast<std::size_t>(std::floor(ideal_val[s])), strata[s].size() - train[s]);
    placed += val[s];
    room[s] = strata[s].size() - train[s] - val[s];
  }
  detail::distribute_remainder(val, ideal_val, room, n_val - placed);

  DatasetSplit out;
  out.seed = seed;
  const Rng base(seed);
  for (std::size_t s = 0; s < n_strata; ++s) {
    auto& members = strata[s];
    Rng rng = base.split(s);
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto& dst = i < train[s] ? out.train : (i < train[s] + val[s] ? out.validation : out.test);
      dst.push_back(std::move(members[i]));
    }
  }
  auto by_path = [](const FaceRecord& a, const FaceRecord& b) { return a.image_path < b.image_path; };
  std::sort(out.train.begin(), out.train.end(), by_path);
  std::sort(out.validation.begin(), out.validation.end(), by_path);
  std::sort(out.test.begin(), out.test.end(), by_path);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: one `path,split` line per record, sorted by path.

inline std::string relative_to(const std::string& path, const std::filesystem::path& root) {
  if (root.empty()) return path;
  return std::filesystem::path(path).lexically_relative(root).generic_string();
}

inline void write_manifest(std::ostream& os, const DatasetSplit& split, const std::filesystem::path& root = {}) {
  std::vector<std::pair<std::string, SplitName>> rows;
  for (auto s : {SplitName::train, SplitName::validation, SplitName::test})
    for (const auto& r : split.get(s)) rows.emplace_back(relative_to(r.image_path, root), s);
  std::sort(rows.begin(), rows.end());
  for (const auto& [p, s] : rows) os << p << ',' << to_string(s) << '\n';
}

/// Reads a manifest back into a split; labels are re-parsed from file names.
/// Paths are resolved against `root` when it is non-empty.
inline DatasetSplit read_manifest(std::istream& is, const std::filesystem::path& root = {}) {
  DatasetSplit out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError("manifest line " + std::to_string(lineno) + ": expected path,split");
    const std::string rel = line.substr(0, comma);
    const SplitName s = parse_split(line.substr(comma + 1));
    const std::string full = root.empty() ? rel : (root / rel).string();
    auto parsed = parse_label(full);
    if (auto* sk = std::get_if<Skip>(&parsed)) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + to_string(sk->reason) + " in '" + rel + "'");
    }
    auto rec = std::get<FaceRecord>(std::move(parsed));
    switch (s) {
      case SplitName::train: out.train.push_back(std::move(rec)); break;
      case SplitName::validation: out.validation.push_back(std::move(rec)); break;
      case SplitName::test: out.test.push_back(std::move(rec)); break;
    }
  }
  return out;
}

inline DatasetSplit read_manifest_file(const std::filesystem::path& path, const std::filesystem::path& root = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path.string() + "'");
  return read_manifest(is, root);
}

// ---------------------------------------------------------------------------
// Composition report laid out like the gender table and the age-group table.

struct Composition {
  // [split][gender], [split][bucket]; split index 0 train, 1 validation, 2 test
  std::array<std::array<std::size_t, 2>, 3> by_gender{};
  std::array<std::array<std::size_t, kAgeBuckets>, 3> by_bucket{};
};

inline Composition composition(const DatasetSplit& split) {
  Composition c;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& r : split.get(static_cast<SplitName>(s))) {
      ++c.by_gender[s][static_cast<std::size_t>(r.gender)];
      ++c.by_bucket[s][age_bucket(r.age)];
    }
  }
  return c;
}

inline std::string format_composition(const Composition& c) {
  std::ostringstream os;
  auto row = [&os](const std::string& label, const auto& cells) {
    std::size_t total = 0;
    os << label;
    for (std::size_t v : cells) {
      os << '\t' << v;
      total += v;
    }
    os << '\t' << total << '\n';
  };
  os << "Composition of sets by gender\n";
  os << "Gender\tTraining\tValidation\tTest\tTotal\n";
  const char* names[2] = {"Male", "Female"};
  std::array<std::size_t, 3> totals{};
  for (std::size_t g = 0; g < 2; ++g) {
    std::array<std::size_t, 3> cells{c.by_gender[0][g], c.by_gender[1][g], c.by_gender[2][g]};
    for (std::size_t s = 0; s < 3; ++s) totals[s] += cells[s];
    row(names[g], cells);
  }
  row("Total", totals);
  os << "\nComposition of sets by age\n";
  os << "Age Group\tTraining\tValidation\tTest\tTotal\n";
  for (std::size_t b = 0; b < kAgeBuckets; ++b) {
    std::array<std::size_t, 3> cells{c.by_bucket[0][b], c.by_bucket[1][b], c.by_bucket[2][b]};
    row(age_bucket_label(b), cells);
  }
  row("Total", totals);
  return os.str();
}

}  // namespace agenet
