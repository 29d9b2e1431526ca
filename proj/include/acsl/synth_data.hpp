#pragma once

// Reproducible synthetic long-tail classification data.
//
// Classes are indexed by frequency rank. Class c draws count(c) training
// samples from an isotropic Gaussian around a per-class mean placed on a
// hypersphere; background samples come from a broad zero-mean Gaussian. The
// test split holds the same number of samples for every class so that
// per-class AP is not biased by training frequency.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <locale>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "acsl/types.hpp"

namespace acsl {

enum class FrequencyGroup : std::uint8_t { kRare = 0, kCommon = 1, kFrequent = 2 };

inline constexpr std::array<FrequencyGroup, 3> kAllGroups = {FrequencyGroup::kRare, FrequencyGroup::kCommon,
                                                             FrequencyGroup::kFrequent};

inline const char* to_string(FrequencyGroup g) {
  switch (g) {
    case FrequencyGroup::kRare: return "rare";
    case FrequencyGroup::kCommon: return "common";
    case FrequencyGroup::kFrequent: return "frequent";
  }
  return "?";
}

/// rare: count <= rare_max; common: rare_max < count <= common_max;
/// frequent: count > common_max.
struct FrequencyGroups {
  std::size_t rare_max = 10;
  std::size_t common_max = 100;

  void validate() const {
    if (!(rare_max > 0 && rare_max < common_max)) {
      throw ConfigError("frequency groups: require 0 < rare_max < common_max");
    }
  }
};

inline FrequencyGroup assign_group(std::size_t count, const FrequencyGroups& groups) {
  if (count <= groups.rare_max) return FrequencyGroup::kRare;
  if (count <= groups.common_max) return FrequencyGroup::kCommon;
  return FrequencyGroup::kFrequent;
}

inline std::vector<FrequencyGroup> assign_groups(std::span<const std::size_t> counts,
                                                 const FrequencyGroups& groups) {
  groups.validate();
  if (counts.empty()) throw InvalidInput("assign_groups: empty counts");
  std::vector<FrequencyGroup> out(counts.size());
  std::transform(counts.begin(), counts.end(), out.begin(),
                 [&](std::size_t n) { return assign_group(n, groups); });
  return out;
}

/// Fraction of background samples whose negative term reaches a classifier
/// of the given group during classifier fine-tuning.
inline double background_retention(FrequencyGroup g) {
  switch (g) {
    case FrequencyGroup::kRare: return 0.01;
    case FrequencyGroup::kCommon: return 0.10;
    case FrequencyGroup::kFrequent: return 1.0;
  }
  return 1.0;
}

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent 64-bit stream key for (seed, tag, a, b).
inline constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                                         std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
  h = splitmix64(h ^ tag);
  h = splitmix64(h ^ a);
  return splitmix64(h ^ b);
}

inline double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Deterministic per-(epoch, sample, class) retention draw.
inline bool background_retained(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample,
                                std::size_t cls, double probability) {
  if (probability >= 1.0) return true;
  const std::uint64_t key = detail::substream(seed, 0x7265746e /* "retn" */, epoch,
                                              (sample << 16) ^ static_cast<std::uint64_t>(cls));
  return detail::unit_interval(key) < probability;
}

struct DatasetSpec {
  std::size_t num_classes = 30;
  std::size_t feature_dim = 16;
  double zipf_exponent = 1.2;
  std::size_t max_count = 1000;
  std::size_t min_count = 5;
  double background_fraction = 0.5;
  double cluster_spread = 1.0;
  /// Norm of every class mean.
  double separation_radius = 4.0;
  /// Standard deviation per coordinate of background samples.
  double background_spread = 1.5;
  /// Pairs (head rank j, tail rank C-1-j) whose means are placed close
  /// together; 12 pairs give every default rare class a frequent-side twin.
  std::size_t confusable_pairs = 12;
  double confusable_distance = 2.0;
  std::size_t test_per_class = 40;
  FrequencyGroups groups{30, 100};
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes == 0) throw ConfigError("dataset.num_classes must be positive");
    if (feature_dim == 0) throw ConfigError("dataset.feature_dim must be positive");
    if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) {
      throw ConfigError("dataset.zipf_exponent must be finite and non-negative");
    }
    if (!(max_count >= min_count && min_count >= 1)) {
      throw ConfigError("dataset: require max_count >= min_count >= 1");
    }
    if (!(background_fraction >= 0.0 && background_fraction < 1.0)) {
      throw ConfigError("dataset.background_fraction must lie in [0, 1)");
    }
    if (!(cluster_spread > 0.0)) throw ConfigError("dataset.cluster_spread must be positive");
    if (!(separation_radius > 0.0)) throw ConfigError("dataset.separation_radius must be positive");
    if (!(background_spread > 0.0)) throw ConfigError("dataset.background_spread must be positive");
    if (!(confusable_distance >= 0.0)) throw ConfigError("dataset.confusable_distance must be non-negative");
    if (2 * confusable_pairs > num_classes) throw ConfigError("dataset.confusable_pairs exceeds num_classes / 2");
    if (test_per_class == 0) throw ConfigError("dataset.test_per_class must be positive (empty test split)");
    try {
      groups.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("dataset.groups: ") + e.what());
    }
  }
};

/// count(rank r) = max(min_count, round(max_count / r^s)), r = 1..C.
inline std::vector<std::size_t> generate_counts(const DatasetSpec& spec) {
  spec.validate();
  std::vector<std::size_t> counts(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double rank = static_cast<double>(c + 1);
    const double raw = static_cast<double>(spec.max_count) / std::pow(rank, spec.zipf_exponent);
    counts[c] = std::max(spec.min_count, static_cast<std::size_t>(std::llround(raw)));
  }
  return counts;
}

/// Row-major feature matrix with one label per row.
struct Split {
  std::size_t feature_dim = 0;
  std::vector<double> features;
  std::vector<SampleLabel> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * feature_dim, feature_dim);
  }

  bool operator==(const Split&) const = default;
};

struct LongTailDataset {
  DatasetSpec spec;
  Split train;
  Split test;
  std::vector<std::size_t> class_counts;
  std::vector<FrequencyGroup> group_of;

  std::size_t num_classes() const noexcept { return class_counts.size(); }
  std::size_t feature_dim() const noexcept { return train.feature_dim; }
};

namespace detail {

inline std::size_t background_count(std::size_t foreground, double fraction) {
  return static_cast<std::size_t>(
      std::llround(fraction / (1.0 - fraction) * static_cast<double>(foreground)));
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline std::vector<std::vector<double>> class_means(const DatasetSpec& spec) {
  std::vector<std::vector<double>> means(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::mt19937_64 rng(substream(spec.seed, 0x6d65616e /* "mean" */, c));
    means[c] = random_unit(rng, spec.feature_dim);
    for (double& x : means[c]) x *= spec.separation_radius;
  }
  // Confusable pairs: tail class placed next to a head class.
  for (std::size_t j = 0; j < spec.confusable_pairs; ++j) {
    const std::size_t head = j;
    const std::size_t tail = spec.num_classes - 1 - j;
    std::mt19937_64 rng(substream(spec.seed, 0x636f6e66 /* "conf" */, tail));
    const std::vector<double> offset = random_unit(rng, spec.feature_dim);
    for (std::size_t k = 0; k < spec.feature_dim; ++k) {
      means[tail][k] = means[head][k] + spec.confusable_distance * offset[k];
    }
  }
  return means;
}

inline void append_gaussian(Split& split, std::mt19937_64& rng, std::span<const double> mean, double spread,
                            std::size_t n, SampleLabel label) {
  std::normal_distribution<double> normal(0.0, spread);
  for (std::size_t i = 0; i < n; ++i) {
    for (double m : mean) split.features.push_back(m + normal(rng));
    split.labels.push_back(label);
  }
}

}  // namespace detail

/// Deterministic in spec.seed: identical specs yield identical datasets.
inline LongTailDataset sample_dataset(const DatasetSpec& spec) {
  spec.validate();
  LongTailDataset ds;
  ds.spec = spec;
  ds.class_counts = generate_counts(spec);
  ds.group_of = assign_groups(ds.class_counts, spec.groups);
  ds.train.feature_dim = spec.feature_dim;
  ds.test.feature_dim = spec.feature_dim;

  const auto means = detail::class_means(spec);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::mt19937_64 rng(detail::substream(spec.seed, 0x636c7373 /* "clss" */, c));
    const auto label = SampleLabel::foreground(c);
    detail::append_gaussian(ds.train, rng, means[c], spec.cluster_spread, ds.class_counts[c], label);
    detail::append_gaussian(ds.test, rng, means[c], spec.cluster_spread, spec.test_per_class, label);
  }

  std::size_t train_foreground = 0;
  for (std::size_t n : ds.class_counts) train_foreground += n;
  const std::size_t test_foreground = spec.test_per_class * spec.num_classes;
  const std::vector<double> origin(spec.feature_dim, 0.0);
  std::mt19937_64 bg_rng(detail::substream(spec.seed, 0x626b6772 /* "bkgr" */));
  detail::append_gaussian(ds.train, bg_rng, origin, spec.background_spread,
                          detail::background_count(train_foreground, spec.background_fraction),
                          SampleLabel::background());
  detail::append_gaussian(ds.test, bg_rng, origin, spec.background_spread,
                          detail::background_count(test_foreground, spec.background_fraction),
                          SampleLabel::background());
  return ds;
}

// ---------------------------------------------------------------------------
// Columnar text format
//
//   # acsl-dataset v1
//   # <key>=<value>            one line per DatasetSpec field
//   split<TAB>label<TAB>group<TAB>f0<TAB>...<TAB>f{d-1}
//   train<TAB>3<TAB>frequent<TAB>0.12...<TAB>...
//   test<TAB>bg<TAB>background<TAB>...
//
// Foreground labels are class indices, background rows use "bg". Features are
// written with 17 significant digits so that import reproduces them exactly.

inline constexpr std::string_view kDatasetMagic = "# acsl-dataset v1";

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<std::pair<std::string, std::string>> spec_fields(const DatasetSpec& s) {
  return {
      {"num_classes", std::to_string(s.num_classes)},
      {"feature_dim", std::to_string(s.feature_dim)},
      {"zipf_exponent", format_double(s.zipf_exponent)},
      {"max_count", std::to_string(s.max_count)},
      {"min_count", std::to_string(s.min_count)},
      {"background_fraction", format_double(s.background_fraction)},
      {"cluster_spread", format_double(s.cluster_spread)},
      {"separation_radius", format_double(s.separation_radius)},
      {"background_spread", format_double(s.background_spread)},
      {"confusable_pairs", std::to_string(s.confusable_pairs)},
      {"confusable_distance", format_double(s.confusable_distance)},
      {"test_per_class", std::to_string(s.test_per_class)},
      {"rare_max", std::to_string(s.groups.rare_max)},
      {"common_max", std::to_string(s.groups.common_max)},
      {"seed", std::to_string(s.seed)},
  };
}

inline void write_split(std::ostream& os, std::string_view name, const Split& split,
                        std::span<const FrequencyGroup> group_of) {
  for (std::size_t i = 0; i < split.size(); ++i) {
    const SampleLabel& label = split.labels[i];
    os << name << '\t';
    if (label.is_background()) {
      os << "bg\tbackground";
    } else {
      os << label.index() << '\t' << to_string(group_of[label.index()]);
    }
    for (double v : split.row(i)) os << '\t' << format_double(v);
    os << '\n';
  }
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  std::istringstream is(text);
  is.imbue(std::locale::classic());
  T value{};
  is >> value;
  if (is.fail() || !is.eof()) throw IoError("dataset import: bad value for " + what + ": '" + text + "'");
  return value;
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const LongTailDataset& ds) {
  os << kDatasetMagic << '\n';
  for (const auto& [key, value] : detail::spec_fields(ds.spec)) os << "# " << key << '=' << value << '\n';
  os << "split\tlabel\tgroup";
  for (std::size_t k = 0; k < ds.feature_dim(); ++k) os << "\tf" << k;
  os << '\n';
  detail::write_split(os, "train", ds.train, ds.group_of);
  detail::write_split(os, "test", ds.test, ds.group_of);
}

inline LongTailDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetMagic) throw IoError("dataset import: missing header");

  std::map<std::string, std::string> fields;
  while (std::getline(is, line) && line.rfind("# ", 0) == 0) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("dataset import: malformed header line '" + line + "'");
    fields[line.substr(2, eq - 2)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw IoError("dataset import: missing header field " + key);
    return it->second;
  };

  DatasetSpec spec;
  spec.num_classes = detail::parse_number<std::size_t>(field("num_classes"), "num_classes");
  spec.feature_dim = detail::parse_number<std::size_t>(field("feature_dim"), "feature_dim");
  spec.zipf_exponent = detail::parse_number<double>(field("zipf_exponent"), "zipf_exponent");
  spec.max_count = detail::parse_number<std::size_t>(field("max_count"), "max_count");
  spec.min_count = detail::parse_number<std::size_t>(field("min_count"), "min_count");
  spec.background_fraction = detail::parse_number<double>(field("background_fraction"), "background_fraction");
  spec.cluster_spread = detail::parse_number<double>(field("cluster_spread"), "cluster_spread");
  spec.separation_radius = detail::parse_number<double>(field("separation_radius"), "separation_radius");
  spec.background_spread = detail::parse_number<double>(field("background_spread"), "background_spread");
  spec.confusable_pairs = detail::parse_number<std::size_t>(field("confusable_pairs"), "confusable_pairs");
  spec.confusable_distance = detail::parse_number<double>(field("confusable_distance"), "confusable_distance");
  spec.test_per_class = detail::parse_number<std::size_t>(field("test_per_class"), "test_per_class");
  spec.groups.rare_max = detail::parse_number<std::size_t>(field("rare_max"), "rare_max");
  spec.groups.common_max = detail::parse_number<std::size_t>(field("common_max"), "common_max");
  spec.seed = detail::parse_number<std::uint64_t>(field("seed"), "seed");
  spec.validate();

  // `line` now holds the column header.
  if (line.rfind("split\tlabel\tgroup", 0) != 0) throw IoError("dataset import: missing column header");

  LongTailDataset ds;
  ds.spec = spec;
  ds.train.feature_dim = spec.feature_dim;
  ds.test.feature_dim = spec.feature_dim;
  ds.class_counts.assign(spec.num_classes, 0);

  std::size_t line_no = 2 + fields.size();
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (cols.size() != 3 + spec.feature_dim) throw IoError("dataset import: wrong column count at " + where);

    Split* split = cols[0] == "train" ? &ds.train : cols[0] == "test" ? &ds.test : nullptr;
    if (split == nullptr) throw IoError("dataset import: unknown split at " + where);
    SampleLabel label = SampleLabel::background();
    if (cols[1] != "bg") {
      const auto k = detail::parse_number<std::size_t>(cols[1], "label at " + where);
      if (k >= spec.num_classes) throw IoError("dataset import: label out of range at " + where);
      label = SampleLabel::foreground(k);
      if (split == &ds.train) ++ds.class_counts[k];
    }
    split->labels.push_back(label);
    for (std::size_t k = 0; k < spec.feature_dim; ++k) {
      split->features.push_back(detail::parse_number<double>(cols[3 + k], "feature at " + where));
    }
  }
  if (!std::is_sorted(ds.class_counts.rbegin(), ds.class_counts.rend())) {
    throw IoError("dataset import: class counts are not ordered by frequency rank");
  }
  ds.group_of = assign_groups(ds.class_counts, spec.groups);
  return ds;
}

inline void save_dataset(const std::string& path, const LongTailDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_dataset(os, ds);
  if (!os) throw IoError("failed writing " + path);
}

inline LongTailDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_dataset(is);
}

}  // namespace acsl
