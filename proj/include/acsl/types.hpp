#pragma once

// Shared value types and error classes for the long-tail loss laboratory.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace acsl {

/// Raw per-class scores or per-class confidences for one sample.
using Vector = std::vector<double>;

/// Binary per-class gate; every entry is exactly 0 or 1.
using WeightMask = std::vector<std::uint8_t>;

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::int64_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  std::int64_t iteration_;
};

/// Either a foreground class index or the background marker.
class SampleLabel {
 public:
  static constexpr SampleLabel foreground(std::size_t k) { return SampleLabel(static_cast<std::int64_t>(k)); }
  static constexpr SampleLabel background() { return SampleLabel(-1); }

  constexpr bool is_background() const noexcept { return index_ < 0; }
  constexpr bool is_foreground() const noexcept { return index_ >= 0; }

  /// Foreground class index; throws for background labels.
  std::size_t index() const {
    if (is_background()) throw InvalidInput("background label has no class index");
    return static_cast<std::size_t>(index_);
  }

  /// True iff this is Foreground(i).
  constexpr bool is(std::size_t i) const noexcept {
    return index_ >= 0 && static_cast<std::size_t>(index_) == i;
  }

  constexpr bool operator==(const SampleLabel&) const = default;

 private:
  constexpr explicit SampleLabel(std::int64_t index) : index_(index) {}
  std::int64_t index_;
};

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  if (values.empty()) throw InvalidInput(std::string(what) + ": empty vector");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite entry");
  }
}

inline void require_label_in_range(const SampleLabel& label, std::size_t num_classes) {
  if (label.is_foreground() && label.index() >= num_classes) {
    throw InvalidInput("label index " + std::to_string(label.index()) + " out of range for " +
                       std::to_string(num_classes) + " classes");
  }
}

}  // namespace detail
}  // namespace acsl
