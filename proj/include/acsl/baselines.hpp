#pragma once

// Comparison losses: softmax cross-entropy, a deterministic Equalization Loss
// and a group softmax in the style of Balanced Group Softmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acsl/loss_core.hpp"
#include "acsl/types.hpp"

namespace acsl {

/// Whether the caller appended a background class as the last logit.
enum class BackgroundSlot { kNone, kLast };

namespace detail {

inline std::size_t softmax_target(std::span<const double> logits, const SampleLabel& label,
                                  BackgroundSlot slot) {
  require_finite(logits, "logits");
  if (label.is_background()) {
    if (slot != BackgroundSlot::kLast) {
      throw InvalidInput("softmax cross-entropy: background label needs an appended background class");
    }
    return logits.size() - 1;
  }
  const std::size_t foreground = slot == BackgroundSlot::kLast ? logits.size() - 1 : logits.size();
  if (label.index() >= foreground) throw InvalidInput("softmax cross-entropy: label out of range");
  return label.index();
}

/// log_sum_exp(values) - values[target], without subtracting two large numbers.
inline double log_sum_exp_minus(std::span<const double> values, std::size_t target) {
  const double peak = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return std::log(sum) - (values[target] - peak);
}

}  // namespace detail

/// Numerically stable softmax.
inline Vector softmax(std::span<const double> logits) {
  detail::require_finite(logits, "logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  Vector probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += probs[i] = std::exp(logits[i] - peak);
  for (double& p : probs) p /= sum;
  return probs;
}

inline double softmax_ce_loss(std::span<const double> logits, const SampleLabel& label,
                              BackgroundSlot slot = BackgroundSlot::kNone) {
  const std::size_t target = detail::softmax_target(logits, label, slot);
  return detail::log_sum_exp_minus(logits, target);
}

inline Vector softmax_ce_grad(std::span<const double> logits, const SampleLabel& label,
                              BackgroundSlot slot = BackgroundSlot::kNone) {
  const std::size_t target = detail::softmax_target(logits, label, slot);
  Vector grad = softmax(logits);
  grad[target] -= 1.0;
  return grad;
}

// ---------------------------------------------------------------------------
// Equalization Loss (deterministic head-to-tail ignore rule)

struct EqlConfig {
  /// Classes with fewer training samples than this are tail classes.
  double tail_threshold = 100.0;

  void validate() const {
    if (!(tail_threshold >= 0.0) || !std::isfinite(tail_threshold)) {
      throw InvalidInput("eql tail_threshold must be a finite non-negative count");
    }
  }
};

/// Foreground samples send no negative gradient to tail classes. Background
/// samples keep every term.
inline WeightMask eql_weights(const SampleLabel& label, std::span<const std::size_t> class_counts,
                              const EqlConfig& cfg) {
  cfg.validate();
  if (class_counts.empty()) throw InvalidInput("eql: empty class counts");
  detail::require_label_in_range(label, class_counts.size());
  WeightMask mask(class_counts.size(), 1);
  if (label.is_background()) return mask;
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    const bool tail = static_cast<double>(class_counts[i]) < cfg.tail_threshold;
    if (!label.is(i) && tail) mask[i] = 0;
  }
  return mask;
}

inline double eql_loss(std::span<const double> logits, const SampleLabel& label,
                       std::span<const std::size_t> class_counts, const EqlConfig& cfg) {
  detail::check_binary_inputs(logits, label);
  if (class_counts.size() != logits.size()) throw InvalidInput("eql: counts/logits length mismatch");
  return detail::masked_binary_loss(logits, label, eql_weights(label, class_counts, cfg));
}

inline Vector eql_grad(std::span<const double> logits, const SampleLabel& label,
                       std::span<const std::size_t> class_counts, const EqlConfig& cfg) {
  detail::check_binary_inputs(logits, label);
  if (class_counts.size() != logits.size()) throw InvalidInput("eql: counts/logits length mismatch");
  return detail::masked_binary_grad(logits, label, eql_weights(label, class_counts, cfg));
}

// ---------------------------------------------------------------------------
// Group softmax

/// Frequency-based class partition. Group of class c is the number of
/// dividing lines t with count(c) >= t, so thresholds {500} give the groups
/// (0,500) and [500,inf).
///
/// Output layout used by the group softmax: the C class logits followed by
/// one "others" logit per group when others slots are enabled.
class GroupPartition {
 public:
  static GroupPartition from_counts(std::span<const std::size_t> class_counts,
                                    std::vector<std::size_t> thresholds, bool others_slots = true) {
    if (class_counts.empty()) throw ConfigError("group partition: no classes");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()) ||
        std::adjacent_find(thresholds.begin(), thresholds.end()) != thresholds.end()) {
      throw ConfigError("group partition: thresholds must be strictly ascending");
    }
    GroupPartition part;
    part.thresholds_ = std::move(thresholds);
    part.others_ = others_slots;
    part.group_of_.resize(class_counts.size());
    part.members_.assign(part.thresholds_.size() + 1, {});
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
      const auto g = static_cast<std::size_t>(
          std::upper_bound(part.thresholds_.begin(), part.thresholds_.end(), class_counts[c]) -
          part.thresholds_.begin());
      part.group_of_[c] = g;
      part.members_[g].push_back(c);
    }
    for (std::size_t g = 0; g < part.members_.size(); ++g) {
      if (part.members_[g].empty()) {
        throw ConfigError("group partition: group " + std::to_string(g) + " is empty");
      }
    }
    return part;
  }

  /// One group holding every class and no others slot: plain softmax.
  static GroupPartition single_group(std::size_t num_classes) {
    const std::vector<std::size_t> counts(num_classes, 1);
    return from_counts(counts, {}, false);
  }

  std::size_t num_classes() const noexcept { return group_of_.size(); }
  std::size_t num_groups() const noexcept { return members_.size(); }
  bool has_others() const noexcept { return others_; }
  std::size_t num_outputs() const noexcept { return num_classes() + (others_ ? num_groups() : 0); }
  std::size_t group_of(std::size_t c) const { return group_of_.at(c); }
  const std::vector<std::size_t>& members(std::size_t g) const { return members_.at(g); }
  const std::vector<std::size_t>& thresholds() const noexcept { return thresholds_; }

  /// Output index of group g's others slot.
  std::size_t others_index(std::size_t g) const {
    if (!others_) throw InvalidInput("group partition has no others slots");
    return num_classes() + g;
  }

  /// Output indices participating in group g's softmax.
  std::vector<std::size_t> slots(std::size_t g) const {
    std::vector<std::size_t> out = members(g);
    if (others_) out.push_back(others_index(g));
    return out;
  }

  /// Target output index for group g, or nullopt if the group gets no
  /// supervision from this label.
  std::optional<std::size_t> target(std::size_t g, const SampleLabel& label) const {
    if (label.is_foreground() && group_of(label.index()) == g) return label.index();
    if (others_) return others_index(g);
    return std::nullopt;
  }

 private:
  GroupPartition() = default;

  std::vector<std::size_t> thresholds_;
  std::vector<std::size_t> group_of_;
  std::vector<std::vector<std::size_t>> members_;
  bool others_ = true;
};

namespace detail {

inline void check_group_inputs(std::span<const double> logits, const SampleLabel& label,
                               const GroupPartition& part) {
  require_finite(logits, "logits");
  if (logits.size() != part.num_outputs()) {
    throw InvalidInput("group softmax: expected " + std::to_string(part.num_outputs()) +
                       " logits, got " + std::to_string(logits.size()));
  }
  require_label_in_range(label, part.num_classes());
  if (label.is_background() && !part.has_others()) {
    throw InvalidInput("group softmax: background label needs others slots");
  }
}

template <typename Visit>
void for_each_group(std::span<const double> logits, const GroupPartition& part, Visit&& visit) {
  Vector group_logits;
  for (std::size_t g = 0; g < part.num_groups(); ++g) {
    const std::vector<std::size_t> slots = part.slots(g);
    group_logits.resize(slots.size());
    for (std::size_t j = 0; j < slots.size(); ++j) group_logits[j] = logits[slots[j]];
    visit(g, slots, std::span<const double>(group_logits));
  }
}

}  // namespace detail

/// Softmax normalised independently inside every group.
inline Vector group_softmax_probs(std::span<const double> logits, const GroupPartition& part) {
  detail::require_finite(logits, "logits");
  if (logits.size() != part.num_outputs()) throw InvalidInput("group softmax: logits length mismatch");
  Vector probs(logits.size(), 0.0);
  detail::for_each_group(logits, part, [&](std::size_t, const std::vector<std::size_t>& slots,
                                           std::span<const double> group_logits) {
    const Vector p = softmax(group_logits);
    for (std::size_t j = 0; j < slots.size(); ++j) probs[slots[j]] = p[j];
  });
  return probs;
}

/// Sum over groups of the within-group softmax cross-entropy.
inline double group_softmax_loss(std::span<const double> logits, const SampleLabel& label,
                                 const GroupPartition& part) {
  detail::check_group_inputs(logits, label, part);
  double loss = 0.0;
  detail::for_each_group(logits, part, [&](std::size_t g, const std::vector<std::size_t>& slots,
                                           std::span<const double> group_logits) {
    const auto target = part.target(g, label);
    if (!target) return;
    const auto pos = static_cast<std::size_t>(std::find(slots.begin(), slots.end(), *target) - slots.begin());
    loss += detail::log_sum_exp_minus(group_logits, pos);
  });
  return loss;
}

/// Gradient over all outputs, others slots included.
inline Vector group_softmax_grad(std::span<const double> logits, const SampleLabel& label,
                                 const GroupPartition& part) {
  detail::check_group_inputs(logits, label, part);
  Vector grad(logits.size(), 0.0);
  detail::for_each_group(logits, part, [&](std::size_t g, const std::vector<std::size_t>& slots,
                                           std::span<const double> group_logits) {
    const auto target = part.target(g, label);
    if (!target) return;
    const Vector p = softmax(group_logits);
    for (std::size_t j = 0; j < slots.size(); ++j) {
      grad[slots[j]] = p[j] - (slots[j] == *target ? 1.0 : 0.0);
    }
  });
  return grad;
}

}  // namespace acsl
