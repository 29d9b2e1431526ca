#pragma once

// Central finite-difference checks of every analytic gradient: the per-sample
// losses over random (logits, label, xi) triples, and forward_backward over
// every parameter of a small classifier.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "acsl/baselines.hpp"
#include "acsl/loss_core.hpp"
#include "acsl/trainer.hpp"

namespace acsl {

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries that are zero up
/// to round-off (e.g. p_i ~ 1e-20) from reporting huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// d f / d x_i by central differences, x restored afterwards.
inline Vector central_difference(const std::function<double(std::span<const double>)>& f, Vector x,
                                 double step = kFiniteDifferenceStep) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = f(x);
    x[i] = saved - step;
    const double minus = f(x);
    x[i] = saved;
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

struct GradCheckResult {
  std::string name;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
};

namespace detail {

inline bool clear_of_threshold(std::span<const double> logits, double xi, double margin = 1e-3) {
  for (double p : sigmoid_probs(logits)) {
    if (std::abs(p - xi) <= margin) return false;
  }
  return true;
}

inline double max_rel(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

}  // namespace detail

/// Checks BCE, ACSL, EQL, softmax CE and group softmax on `trials` random
/// triples each, with C <= max_classes and every |p_i - xi| > 1e-3.
inline std::vector<GradCheckResult> check_loss_gradients(std::size_t trials, std::uint64_t seed,
                                                         std::size_t max_classes = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> classes(2, max_classes);
  std::uniform_real_distribution<double> logit(-8.0, 8.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(1, 1000);

  GradCheckResult bce{"bce"}, acsl{"acsl"}, eql{"eql"}, sce{"softmax_ce"}, gsm{"group_softmax"};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = classes(rng);
    const double xi = unit(rng);
    Vector z(c);
    do {
      for (double& v : z) v = logit(rng);
    } while (!detail::clear_of_threshold(z, xi));
    const bool background = unit(rng) < 0.2;
    const SampleLabel label =
        background ? SampleLabel::background() : SampleLabel::foreground(std::uniform_int_distribution<std::size_t>(0, c - 1)(rng));

    auto record = [](GradCheckResult& r, const Vector& analytic, const Vector& numeric) {
      ++r.cases;
      r.max_rel_error = std::max(r.max_rel_error, detail::max_rel(analytic, numeric));
    };

    record(bce, bce_grad(z, label),
           central_difference([&](std::span<const double> x) { return bce_loss(x, label); }, z));

    const AcslConfig cfg{xi};
    record(acsl, acsl_grad(z, label, cfg),
           central_difference([&](std::span<const double> x) { return acsl_loss(x, label, cfg); }, z));

    std::vector<std::size_t> counts(c);
    for (auto& n : counts) n = count(rng);
    const EqlConfig eql_cfg{static_cast<double>(count(rng))};
    record(eql, eql_grad(z, label, counts, eql_cfg),
           central_difference([&](std::span<const double> x) { return eql_loss(x, label, counts, eql_cfg); }, z));

    // Softmax CE: background maps to an appended background logit.
    Vector zb = z;
    zb.push_back(logit(rng));
    record(sce, softmax_ce_grad(zb, label, BackgroundSlot::kLast),
           central_difference([&](std::span<const double> x) { return softmax_ce_loss(x, label, BackgroundSlot::kLast); },
                              zb));

    // Group softmax over a partition at a random dividing line.
    std::vector<std::size_t> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() != sorted.back()) {
      const std::size_t line = sorted.back();
      const GroupPartition part = GroupPartition::from_counts(counts, {line}, true);
      Vector zg = z;
      for (std::size_t g = 0; g < part.num_groups(); ++g) zg.push_back(logit(rng));
      record(gsm, group_softmax_grad(zg, label, part),
             central_difference([&](std::span<const double> x) { return group_softmax_loss(x, label, part); }, zg));
    } else {
      const GroupPartition part = GroupPartition::single_group(c);
      if (label.is_foreground()) {
        record(gsm, group_softmax_grad(z, label, part),
               central_difference([&](std::span<const double> x) { return group_softmax_loss(x, label, part); }, z));
      }
    }
  }
  return {bce, acsl, eql, sce, gsm};
}

namespace detail {

inline std::vector<double>* param_tensor(MlpParameters& p, int which) {
  switch (which) {
    case 0: return &p.hidden_weights;
    case 1: return &p.hidden_bias;
    case 2: return &p.output_weights;
    default: return &p.output_bias;
  }
}

}  // namespace detail

/// forward_backward against central differences of the mean batch loss over
/// every parameter of a small random model, for every loss family. Samples
/// near a ReLU kink or the ACSL threshold are redrawn.
inline std::vector<GradCheckResult> check_model_gradients(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<GradCheckResult> results;
  for (LossFamily family :
       {LossFamily::kSoftmaxCe, LossFamily::kBce, LossFamily::kAcsl, LossFamily::kEql, LossFamily::kGroupSoftmax}) {
    GradCheckResult res{std::string("model/") + to_string(family)};
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t d = dim(rng), h = dim(rng), c = dim(rng);
      std::vector<std::size_t> counts(c);
      for (std::size_t k = 0; k < c; ++k) counts[k] = 100 / (k + 1);
      // Dividing line at the head count: {class 0} versus the rest.
      LossSpec spec{family, AcslConfig{0.3 + 0.4 * unit(rng)}, EqlConfig{30.0}, {counts.front()}};
      const LossHead head(spec, counts);
      const auto groups = assign_groups(counts, FrequencyGroups{20, 50});

      MlpClassifier model = MlpClassifier::init(d, h, head.num_outputs(), seed + t);
      for (double& b : model.params.hidden_bias) b = 0.1 * normal(rng);
      for (double& b : model.params.output_bias) b = normal(rng);

      Split batch{d, {}, {}};
      const std::size_t n = 1 + t % 5;
      for (std::size_t i = 0; i < n; ++i) {
        for (;;) {
          std::vector<double> x(d);
          for (double& v : x) v = normal(rng);
          const bool bg = unit(rng) < 0.25;
          Vector pre, logits;
          model.forward(x, pre, logits);
          const bool near_kink =
              std::any_of(pre.begin(), pre.end(), [](double v) { return std::abs(v) < 1e-3; });
          if (near_kink) continue;
          if (family == LossFamily::kAcsl && !detail::clear_of_threshold(logits, spec.acsl.xi, 1e-2)) continue;
          batch.features.insert(batch.features.end(), x.begin(), x.end());
          batch.labels.push_back(bg ? SampleLabel::background()
                                    : SampleLabel::foreground(std::uniform_int_distribution<std::size_t>(0, c - 1)(rng)));
          break;
        }
      }
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      const RetentionContext retention{t % 2 == 1, seed, t, groups};

      const BatchResult analytic = forward_backward(model, batch, idx, head, retention);
      MlpParameters grads = analytic.grads;
      for (int which = 0; which < 4; ++which) {
        std::vector<double>& tensor = *detail::param_tensor(model.params, which);
        const std::vector<double>& g = *detail::param_tensor(grads, which);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
          const double saved = tensor[i];
          tensor[i] = saved + kFiniteDifferenceStep;
          const double plus = forward_backward(model, batch, idx, head, retention).loss;
          tensor[i] = saved - kFiniteDifferenceStep;
          const double minus = forward_backward(model, batch, idx, head, retention).loss;
          tensor[i] = saved;
          const double numeric = (plus - minus) / (2.0 * kFiniteDifferenceStep);
          res.max_rel_error = std::max(res.max_rel_error, relative_error(g[i], numeric));
        }
      }
      ++res.cases;
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace acsl
