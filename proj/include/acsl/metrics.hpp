#pragma once

// Per-class average precision on the balanced test split and its
// rare/common/frequent aggregation.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "acsl/synth_data.hpp"
#include "acsl/trainer.hpp"
#include "acsl/types.hpp"

namespace acsl {

struct ScoredSample {
  double score = 0.0;
  bool positive = false;
  std::size_t index = 0;  // tie-break key
};

/// Sorts by descending score, ties by ascending sample index.
inline void rank(std::vector<ScoredSample>& ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const ScoredSample& a, const ScoredSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
}

/// Mean of precision@rank over the ranks of the positives of an already
/// ranked list; nullopt without positives.
inline std::optional<double> average_precision(std::span<const ScoredSample> ranked) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (!ranked[r].positive) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

/// Per-class rankings of a test split given an N x C score matrix.
inline std::vector<std::vector<ScoredSample>> per_class_scores(const Split& split,
                                                               std::span<const Vector> scores,
                                                               std::size_t num_classes) {
  if (scores.size() != split.size()) throw InvalidInput("per_class_scores: score rows do not match samples");
  std::vector<std::vector<ScoredSample>> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    out[c].reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (scores[i].size() != num_classes) throw InvalidInput("per_class_scores: ragged score matrix");
      out[c].push_back({scores[i][c], split.labels[i].is(c), i});
    }
    rank(out[c]);
  }
  return out;
}

struct GroupReport {
  /// Per-class AP; nullopt for classes without test positives (excluded).
  std::vector<std::optional<double>> per_class;
  std::vector<FrequencyGroup> group_of;
  double m_ap = 0.0;
  std::optional<double> ap_r, ap_c, ap_f;
  std::vector<std::size_t> excluded;

  std::optional<double> group_mean(FrequencyGroup g) const {
    switch (g) {
      case FrequencyGroup::kRare: return ap_r;
      case FrequencyGroup::kCommon: return ap_c;
      case FrequencyGroup::kFrequent: return ap_f;
    }
    return std::nullopt;
  }
};

/// Unweighted means over all evaluated classes and over each group; empty
/// groups are reported as absent.
inline GroupReport group_report(std::vector<std::optional<double>> per_class,
                                std::span<const FrequencyGroup> group_of) {
  if (per_class.size() != group_of.size()) throw InvalidInput("group_report: group map does not cover classes");
  GroupReport rep;
  rep.group_of.assign(group_of.begin(), group_of.end());
  double total = 0.0;
  std::size_t n = 0;
  double sums[3] = {0.0, 0.0, 0.0};
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (!per_class[c]) {
      rep.excluded.push_back(c);
      continue;
    }
    const auto g = static_cast<std::size_t>(group_of[c]);
    total += *per_class[c];
    ++n;
    sums[g] += *per_class[c];
    ++counts[g];
  }
  if (n == 0) throw InvalidInput("group_report: no class has test positives");
  rep.m_ap = total / static_cast<double>(n);
  auto mean = [&](std::size_t g) -> std::optional<double> {
    if (counts[g] == 0) return std::nullopt;
    return sums[g] / static_cast<double>(counts[g]);
  };
  rep.ap_r = mean(0);
  rep.ap_c = mean(1);
  rep.ap_f = mean(2);
  rep.per_class = std::move(per_class);
  return rep;
}

/// Scores the test split with a trained model and aggregates per group.
inline GroupReport evaluate(const MlpClassifier& model, const LossHead& head, const LongTailDataset& data) {
  std::vector<Vector> scores(data.test.size());
  for (std::size_t i = 0; i < data.test.size(); ++i) scores[i] = head.scores(model.logits(data.test.row(i)));
  const auto ranked = per_class_scores(data.test, scores, data.num_classes());
  std::vector<std::optional<double>> ap(data.num_classes());
  for (std::size_t c = 0; c < ap.size(); ++c) ap[c] = average_precision(ranked[c]);
  return group_report(std::move(ap), data.group_of);
}

namespace detail {

inline std::string optional_number(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("absent");
}

}  // namespace detail

/// Tab-separated per-class rows followed by a "# summary" block.
inline void write_report_tsv(std::ostream& os, const GroupReport& rep, std::span<const std::size_t> class_counts,
                             const std::string& score_semantics) {
  os << "# scores: " << score_semantics << '\n';
  os << "class\tgroup\ttrain_count\tap\n";
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    os << c << '\t' << to_string(rep.group_of[c]) << '\t' << class_counts[c] << '\t'
       << detail::optional_number(rep.per_class[c]) << '\n';
  }
  os << "# summary\n";
  os << "m_ap\t" << detail::format_double(rep.m_ap) << '\n';
  os << "ap_r\t" << detail::optional_number(rep.ap_r) << '\n';
  os << "ap_c\t" << detail::optional_number(rep.ap_c) << '\n';
  os << "ap_f\t" << detail::optional_number(rep.ap_f) << '\n';
}

}  // namespace acsl
