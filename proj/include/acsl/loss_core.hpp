#pragma once

// Sigmoid binary cross-entropy and Adaptive Class Suppression Loss (ACSL).
//
// For a sample with label k and logits z, ACSL weights each binary term with a
// mask w computed from the current confidences p = sigmoid(z):
//
//   L = -sum_i w_i * log(phat_i),   phat_k = p_k, phat_i = 1 - p_i (i != k)
//   w_k = 1;  w_i = [p_i >= xi] (i != k)
//   dL/dz_k = p_k - 1;  dL/dz_i = w_i * p_i (i != k)
//
// The mask is a constant of the backward pass. Background samples have no
// positive term and use the i != k rule for every class. With xi = 0 every
// mask entry is 1 and ACSL is exactly BCE.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "acsl/types.hpp"

namespace acsl {

struct AcslConfig {
  double xi = 0.7;

  void validate() const {
    if (!(xi >= 0.0 && xi <= 1.0)) throw InvalidInput("acsl xi must lie in [0, 1]");
  }
};

namespace detail {

// Sigmoid saturates to exactly 0 or 1 in double well before |z| = 50; keep
// confidences inside the open unit interval.
inline constexpr double kProbLo = std::numeric_limits<double>::min();
inline constexpr double kProbHi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

inline double sigmoid(double z) {
  double p;
  if (z >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  return std::clamp(p, kProbLo, kProbHi);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// -log(p) for p = sigmoid(z).
inline double neg_log_sigmoid(double z) { return softplus(-z); }

/// -log(1 - p) for p = sigmoid(z).
inline double neg_log_one_minus_sigmoid(double z) { return softplus(z); }

/// Shared masked binary loss; `mask` is treated as constant.
inline double masked_binary_loss(std::span<const double> logits, const SampleLabel& label,
                                 const WeightMask& mask) {
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (label.is(i)) {
      loss += neg_log_sigmoid(logits[i]);
    } else if (mask[i] != 0) {
      loss += neg_log_one_minus_sigmoid(logits[i]);
    }
  }
  return loss;
}

inline Vector masked_binary_grad(std::span<const double> logits, const SampleLabel& label,
                                 const WeightMask& mask) {
  Vector grad(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (label.is(i)) {
      grad[i] = -sigmoid(-logits[i]);  // p_k - 1 without cancellation
    } else if (mask[i] != 0) {
      grad[i] = sigmoid(logits[i]);
    }
  }
  return grad;
}

inline void check_binary_inputs(std::span<const double> logits, const SampleLabel& label) {
  require_finite(logits, "logits");
  require_label_in_range(label, logits.size());
}

}  // namespace detail

/// Elementwise sigmoid; every output lies strictly inside (0, 1).
inline Vector sigmoid_probs(std::span<const double> logits) {
  detail::require_finite(logits, "logits");
  Vector probs(logits.size());
  std::transform(logits.begin(), logits.end(), probs.begin(), detail::sigmoid);
  return probs;
}

inline double bce_loss(std::span<const double> logits, const SampleLabel& label) {
  detail::check_binary_inputs(logits, label);
  return detail::masked_binary_loss(logits, label, WeightMask(logits.size(), 1));
}

inline Vector bce_grad(std::span<const double> logits, const SampleLabel& label) {
  detail::check_binary_inputs(logits, label);
  return detail::masked_binary_grad(logits, label, WeightMask(logits.size(), 1));
}

/// Suppression mask. The target class is always kept; any other class is
/// kept iff its confidence reaches xi (ties inclusive).
inline WeightMask acsl_weights(std::span<const double> probs, const SampleLabel& label,
                               const AcslConfig& cfg) {
  cfg.validate();
  if (probs.empty()) throw InvalidInput("probs: empty vector");
  for (double p : probs) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidInput("probs: entries must lie in (0, 1)");
  }
  detail::require_label_in_range(label, probs.size());

  WeightMask mask(probs.size(), 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    mask[i] = (label.is(i) || probs[i] >= cfg.xi) ? 1 : 0;
  }
  return mask;
}

inline double acsl_loss(std::span<const double> logits, const SampleLabel& label,
                        const AcslConfig& cfg) {
  detail::check_binary_inputs(logits, label);
  const WeightMask mask = acsl_weights(sigmoid_probs(logits), label, cfg);
  return detail::masked_binary_loss(logits, label, mask);
}

inline Vector acsl_grad(std::span<const double> logits, const SampleLabel& label,
                        const AcslConfig& cfg) {
  detail::check_binary_inputs(logits, label);
  const WeightMask mask = acsl_weights(sigmoid_probs(logits), label, cfg);
  return detail::masked_binary_grad(logits, label, mask);
}

}  // namespace acsl
