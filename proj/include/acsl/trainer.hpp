#pragma once

// Mini-batch SGD with momentum, linear warmup and step decay for a
// one-hidden-layer ReLU classifier, with hand-written backpropagation and the
// decoupled two-stage schedule: stage 1 trains everything with softmax
// cross-entropy, stage 2 freezes the representation layer and fine-tunes the
// classifier layer with a long-tail loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acsl/baselines.hpp"
#include "acsl/loss_core.hpp"
#include "acsl/synth_data.hpp"
#include "acsl/types.hpp"

namespace acsl {

// ---------------------------------------------------------------------------
// Loss selection

enum class LossFamily { kSoftmaxCe, kBce, kAcsl, kEql, kGroupSoftmax };

inline const char* to_string(LossFamily f) {
  switch (f) {
    case LossFamily::kSoftmaxCe: return "softmax_ce";
    case LossFamily::kBce: return "bce";
    case LossFamily::kAcsl: return "acsl";
    case LossFamily::kEql: return "eql";
    case LossFamily::kGroupSoftmax: return "group_softmax";
  }
  return "?";
}

inline LossFamily parse_loss_family(std::string_view name) {
  for (LossFamily f : {LossFamily::kSoftmaxCe, LossFamily::kBce, LossFamily::kAcsl, LossFamily::kEql,
                       LossFamily::kGroupSoftmax}) {
    if (name == to_string(f)) return f;
  }
  throw ConfigError("unknown loss family '" + std::string(name) + "'");
}

inline bool is_binary_family(LossFamily f) {
  return f == LossFamily::kBce || f == LossFamily::kAcsl || f == LossFamily::kEql;
}

struct LossSpec {
  LossFamily family = LossFamily::kSoftmaxCe;
  AcslConfig acsl;
  EqlConfig eql;
  /// Dividing lines of the group softmax partition.
  std::vector<std::size_t> group_thresholds;
};

/// A loss bound to a dataset's class statistics, mapping model outputs to a
/// scalar loss, its gradient and per-class confidence scores.
///
/// Output layout: binary losses use C outputs, softmax cross-entropy appends
/// a background class (C + 1), group softmax appends one others slot per
/// group (C + G).
class LossHead {
 public:
  LossHead(LossSpec spec, std::span<const std::size_t> class_counts)
      : spec_(std::move(spec)), counts_(class_counts.begin(), class_counts.end()) {
    if (counts_.empty()) throw ConfigError("loss head: no classes");
    spec_.acsl.validate();
    spec_.eql.validate();
    if (spec_.family == LossFamily::kGroupSoftmax) {
      partition_ = GroupPartition::from_counts(counts_, spec_.group_thresholds, true);
    }
  }

  const LossSpec& spec() const noexcept { return spec_; }
  LossFamily family() const noexcept { return spec_.family; }
  bool is_binary() const noexcept { return is_binary_family(spec_.family); }
  std::size_t num_classes() const noexcept { return counts_.size(); }
  const GroupPartition& partition() const { return partition_.value(); }

  std::size_t num_outputs() const {
    switch (spec_.family) {
      case LossFamily::kSoftmaxCe: return num_classes() + 1;
      case LossFamily::kGroupSoftmax: return partition_->num_outputs();
      default: return num_classes();
    }
  }

  /// Loss of one sample; `grad` receives dL/dlogits. `keep`, when non-empty,
  /// further masks the negative terms of binary losses.
  double loss_and_grad(std::span<const double> logits, const SampleLabel& label, const WeightMask& keep,
                       Vector& grad) const {
    switch (spec_.family) {
      case LossFamily::kSoftmaxCe:
        grad = softmax_ce_grad(logits, label, BackgroundSlot::kLast);
        return softmax_ce_loss(logits, label, BackgroundSlot::kLast);
      case LossFamily::kGroupSoftmax:
        grad = group_softmax_grad(logits, label, *partition_);
        return group_softmax_loss(logits, label, *partition_);
      default: break;
    }
    detail::check_binary_inputs(logits, label);
    WeightMask mask = binary_mask(logits, label);
    if (!keep.empty()) {
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (mask[i] && (keep[i] || label.is(i))) ? 1 : 0;
    }
    grad = detail::masked_binary_grad(logits, label, mask);
    return detail::masked_binary_loss(logits, label, mask);
  }

  /// Per-class confidences: sigmoid for binary losses, global softmax for
  /// softmax cross-entropy, within-group softmax for group softmax.
  Vector scores(std::span<const double> logits) const {
    Vector probs;
    switch (spec_.family) {
      case LossFamily::kSoftmaxCe: probs = softmax(logits); break;
      case LossFamily::kGroupSoftmax: probs = group_softmax_probs(logits, *partition_); break;
      default: probs = sigmoid_probs(logits); break;
    }
    probs.resize(num_classes());
    return probs;
  }

  const char* score_semantics() const {
    switch (spec_.family) {
      case LossFamily::kSoftmaxCe: return "global softmax probability";
      case LossFamily::kGroupSoftmax: return "within-group softmax probability";
      default: return "sigmoid confidence";
    }
  }

 private:
  WeightMask binary_mask(std::span<const double> logits, const SampleLabel& label) const {
    switch (spec_.family) {
      case LossFamily::kAcsl: return acsl_weights(sigmoid_probs(logits), label, spec_.acsl);
      case LossFamily::kEql: return eql_weights(label, counts_, spec_.eql);
      default: return WeightMask(logits.size(), 1);
    }
  }

  LossSpec spec_;
  std::vector<std::size_t> counts_;
  std::optional<GroupPartition> partition_;
};

// ---------------------------------------------------------------------------
// Model

/// Parameter tensors of the classifier, also used for gradients and momentum.
struct MlpParameters {
  std::vector<double> hidden_weights;  // hidden x input, row-major
  std::vector<double> hidden_bias;
  std::vector<double> output_weights;  // output x hidden, row-major
  std::vector<double> output_bias;

  bool operator==(const MlpParameters&) const = default;
};

struct MlpClassifier {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;
  MlpParameters params;

  /// He-normal representation layer, scaled-normal classifier, zero biases.
  static MlpClassifier init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                            std::uint64_t seed) {
    if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) throw ConfigError("model: zero dimension");
    MlpClassifier m{input_dim, hidden_dim, output_dim, {}};
    std::mt19937_64 rng(detail::substream(seed, 0x696e6974 /* "init" */));
    std::normal_distribution<double> hidden(0.0, std::sqrt(2.0 / static_cast<double>(input_dim)));
    std::normal_distribution<double> output(0.0, std::sqrt(1.0 / static_cast<double>(hidden_dim)));
    m.params.hidden_weights.resize(hidden_dim * input_dim);
    for (double& w : m.params.hidden_weights) w = hidden(rng);
    m.params.hidden_bias.assign(hidden_dim, 0.0);
    m.params.output_weights.resize(output_dim * hidden_dim);
    for (double& w : m.params.output_weights) w = output(rng);
    m.params.output_bias.assign(output_dim, 0.0);
    return m;
  }

  MlpParameters zeros_like() const {
    return {std::vector<double>(params.hidden_weights.size(), 0.0), std::vector<double>(hidden_dim, 0.0),
            std::vector<double>(params.output_weights.size(), 0.0), std::vector<double>(output_dim, 0.0)};
  }

  /// Pre-activations of the hidden layer and the output logits.
  void forward(std::span<const double> x, Vector& hidden_pre, Vector& logits) const {
    hidden_pre.assign(hidden_dim, 0.0);
    for (std::size_t j = 0; j < hidden_dim; ++j) {
      double acc = params.hidden_bias[j];
      const double* w = &params.hidden_weights[j * input_dim];
      for (std::size_t k = 0; k < input_dim; ++k) acc += w[k] * x[k];
      hidden_pre[j] = acc;
    }
    logits.assign(output_dim, 0.0);
    for (std::size_t o = 0; o < output_dim; ++o) {
      double acc = params.output_bias[o];
      const double* w = &params.output_weights[o * hidden_dim];
      for (std::size_t j = 0; j < hidden_dim; ++j) acc += w[j] * std::max(hidden_pre[j], 0.0);
      logits[o] = acc;
    }
  }

  Vector logits(std::span<const double> x) const {
    Vector hidden_pre, out;
    forward(x, hidden_pre, out);
    return out;
  }

  bool operator==(const MlpClassifier&) const = default;
};

// ---------------------------------------------------------------------------
// Optimisation

struct TrainConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t warmup_iters = 500;
  /// Warmup starts at base_lr * warmup_ratio and ramps linearly to base_lr.
  double warmup_ratio = 1.0 / 3.0;
  std::vector<std::int64_t> decay_milestones{8, 11};
  double decay_factor = 0.1;
  std::int64_t epochs = 12;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (warmup_iters < 0) throw ConfigError("train.warmup_iters must be non-negative");
    if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw ConfigError("train.warmup_ratio must lie in (0, 1]");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("train.decay_factor must lie in (0, 1)");
    if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    for (std::size_t i = 0; i < decay_milestones.size(); ++i) {
      if (decay_milestones[i] < 0 || (epochs > 0 && decay_milestones[i] >= epochs) ||
          (i > 0 && decay_milestones[i] <= decay_milestones[i - 1])) {
        throw ConfigError("train.decay_milestones must be strictly increasing and below epochs");
      }
    }
  }
};

/// Learning rate at a global iteration (0-based) inside a 0-based epoch.
inline double lr_at(std::int64_t iter, std::int64_t epoch, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (std::int64_t m : cfg.decay_milestones) {
    if (epoch >= m) lr *= cfg.decay_factor;
  }
  if (iter < cfg.warmup_iters) {
    const double t = static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
    lr *= cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * t;
  }
  return lr;
}

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
inline void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                     double lr, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw InvalidInput("sgd_step: shape mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw TrainingDiverged("sgd_step: non-finite gradient", -1);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grads[i] + cfg.weight_decay * params[i];
    params[i] -= lr * velocity[i];
  }
}

/// Stage-2 background retention: which classes see each background sample's
/// negative term in a given epoch.
struct RetentionContext {
  bool enabled = false;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::span<const FrequencyGroup> group_of;
};

struct BatchResult {
  double loss = 0.0;
  MlpParameters grads;
};

/// Mean loss over `batch` (indices into `split`) and its gradient with respect
/// to every parameter. With `frozen_hidden` the representation-layer gradients
/// are left at zero.
inline BatchResult forward_backward(const MlpClassifier& model, const Split& split,
                                    std::span<const std::size_t> batch, const LossHead& head,
                                    const RetentionContext& retention = {}, bool frozen_hidden = false) {
  if (batch.empty()) throw InvalidInput("forward_backward: empty batch");
  if (split.feature_dim != model.input_dim) throw InvalidInput("forward_backward: feature dim mismatch");
  if (head.num_outputs() != model.output_dim) throw InvalidInput("forward_backward: output dim mismatch");
  if (retention.enabled && retention.group_of.size() != head.num_classes()) {
    throw InvalidInput("forward_backward: retention groups do not cover every class");
  }

  BatchResult out{0.0, model.zeros_like()};
  MlpParameters& g = out.grads;
  const auto& p = model.params;
  const std::size_t d = model.input_dim, h = model.hidden_dim;
  const double scale = 1.0 / static_cast<double>(batch.size());

  Vector hidden_pre, logits, dlogits, dhidden(h);
  WeightMask keep;
  for (std::size_t idx : batch) {
    if (idx >= split.size()) throw InvalidInput("forward_backward: sample index out of range");
    const auto x = split.row(idx);
    const SampleLabel& label = split.labels[idx];
    model.forward(x, hidden_pre, logits);

    keep.clear();
    if (retention.enabled && head.is_binary() && label.is_background()) {
      keep.resize(head.num_classes());
      for (std::size_t c = 0; c < keep.size(); ++c) {
        keep[c] = background_retained(retention.seed, retention.epoch, idx, c,
                                      background_retention(retention.group_of[c]))
                      ? 1
                      : 0;
      }
    }
    out.loss += head.loss_and_grad(logits, label, keep, dlogits) * scale;

    std::fill(dhidden.begin(), dhidden.end(), 0.0);
    for (std::size_t o = 0; o < model.output_dim; ++o) {
      const double dz = dlogits[o] * scale;
      if (dz == 0.0) continue;
      g.output_bias[o] += dz;
      double* gw = &g.output_weights[o * h];
      const double* w = &p.output_weights[o * h];
      for (std::size_t j = 0; j < h; ++j) {
        gw[j] += dz * std::max(hidden_pre[j], 0.0);
        dhidden[j] += dz * w[j];
      }
    }
    if (frozen_hidden) continue;
    for (std::size_t j = 0; j < h; ++j) {
      if (hidden_pre[j] <= 0.0) continue;
      g.hidden_bias[j] += dhidden[j];
      double* gw = &g.hidden_weights[j * d];
      for (std::size_t k = 0; k < d; ++k) gw[k] += dhidden[j] * x[k];
    }
  }
  return out;
}

/// Mean loss of the whole split, no retention.
inline double mean_loss(const MlpClassifier& model, const Split& split, const LossHead& head) {
  Vector hidden_pre, logits, grad;
  double total = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    model.forward(split.row(i), hidden_pre, logits);
    total += head.loss_and_grad(logits, split.labels[i], {}, grad);
  }
  return total / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Training log

/// One row per epoch. Epoch -1 holds the loss before the stage's first update.
struct LogRow {
  int stage = 1;
  std::int64_t epoch = 0;
  std::int64_t iteration = 0;
  double lr = 0.0;
  double loss = 0.0;

  bool operator==(const LogRow&) const = default;
};

struct TrainingLog {
  std::vector<LogRow> rows;
  double stage2_lr_scale = 1.0;

  bool operator==(const TrainingLog&) const = default;
};

/// Tab-separated: a "# stage2_lr_scale=<v>" line, a column header
/// "stage epoch iteration lr loss", then one row per epoch.
inline void write_training_log(std::ostream& os, const TrainingLog& log) {
  os << "# stage2_lr_scale=" << detail::format_double(log.stage2_lr_scale) << '\n';
  os << "stage\tepoch\titeration\tlr\tloss\n";
  for (const LogRow& r : log.rows) {
    os << r.stage << '\t' << r.epoch << '\t' << r.iteration << '\t' << detail::format_double(r.lr) << '\t'
       << detail::format_double(r.loss) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Two-stage schedule

/// Default recipe with the warmup shortened to desk-scale epochs (about 70
/// iterations each on the default dataset).
inline TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.warmup_iters = 100;
  return cfg;
}

struct TwoStageSchedule {
  std::size_t hidden_dim = 32;
  TrainConfig stage1 = desk_train_config();
  LossSpec stage1_loss{LossFamily::kSoftmaxCe, {}, {}, {}};
  TrainConfig stage2 = desk_train_config();
  LossSpec stage2_loss{LossFamily::kAcsl, {}, {}, {}};
  /// Stage-2 learning rate relative to stage 1; applied on top of stage2.base_lr.
  double stage2_lr_scale = 1.0;
  /// Apply per-group background retention to binary losses in stage 2.
  bool background_retention = true;

  void validate() const {
    if (hidden_dim == 0) throw ConfigError("schedule.hidden_dim must be positive");
    stage1.validate();
    stage2.validate();
    if (!(stage2_lr_scale > 0.0)) throw ConfigError("schedule.stage2_lr_scale must be positive");
  }
};

struct StageOptions {
  int stage = 1;
  bool frozen_hidden = false;
  bool retention = false;
};

/// Trains `model` in place for cfg.epochs epochs. Momentum starts from zero.
inline void train_stage(MlpClassifier& model, const LongTailDataset& data, const TrainConfig& cfg,
                        const LossHead& head, const StageOptions& opts, TrainingLog& log) {
  cfg.validate();
  const Split& split = data.train;
  if (split.size() == 0) throw ConfigError("training split is empty");

  log.rows.push_back({opts.stage, -1, 0, 0.0, mean_loss(model, split, head)});
  if (!std::isfinite(log.rows.back().loss)) throw TrainingDiverged("initial loss is not finite", 0);

  MlpParameters velocity = model.zeros_like();
  std::vector<std::size_t> order(split.size());
  std::int64_t iter = 0;
  double lr = 0.0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(detail::substream(cfg.seed, 0x73687566 /* "shuf" */, static_cast<std::uint64_t>(opts.stage),
                                          static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    const RetentionContext retention{opts.retention, cfg.seed, static_cast<std::uint64_t>(epoch), data.group_of};
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      BatchResult r;
      try {
        r = forward_backward(model, split, batch, head, retention, opts.frozen_hidden);
      } catch (const InvalidInput&) {
        // Finite inputs only turn non-finite through blown-up parameters.
        r.loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(r.loss)) {
        throw TrainingDiverged("loss became non-finite in stage " + std::to_string(opts.stage) + " at iteration " +
                                   std::to_string(iter),
                               iter);
      }
      lr = lr_at(iter, epoch, cfg);
      try {
        if (!opts.frozen_hidden) {
          sgd_step(model.params.hidden_weights, r.grads.hidden_weights, velocity.hidden_weights, lr, cfg);
          sgd_step(model.params.hidden_bias, r.grads.hidden_bias, velocity.hidden_bias, lr, cfg);
        }
        sgd_step(model.params.output_weights, r.grads.output_weights, velocity.output_weights, lr, cfg);
        sgd_step(model.params.output_bias, r.grads.output_bias, velocity.output_bias, lr, cfg);
      } catch (const TrainingDiverged&) {
        throw TrainingDiverged("non-finite gradient in stage " + std::to_string(opts.stage) + " at iteration " +
                                   std::to_string(iter),
                               iter);
      }
      epoch_loss += r.loss * static_cast<double>(batch.size());
      seen += batch.size();
      ++iter;
    }
    log.rows.push_back({opts.stage, epoch, iter, lr, epoch_loss / static_cast<double>(seen)});
  }
}

/// Re-targets the classifier layer of a model trained with `from` so it can be
/// fine-tuned with `to`. From softmax cross-entropy, binary classifiers become
/// log-odds against the background class (row_c - row_bg) and group-softmax
/// others slots start as copies of the background row.
inline MlpClassifier adapt_head(const MlpClassifier& model, const LossHead& from, const LossHead& to) {
  if (from.family() == to.family() && from.num_outputs() == to.num_outputs()) return model;
  if (from.family() != LossFamily::kSoftmaxCe) {
    throw ConfigError(std::string("cannot fine-tune a ") + to_string(from.family()) + " head with " +
                      to_string(to.family()));
  }
  const std::size_t h = model.hidden_dim, num_classes = to.num_classes(), bg = num_classes;
  MlpClassifier out = model;
  out.output_dim = to.num_outputs();
  out.params.output_weights.assign(out.output_dim * h, 0.0);
  out.params.output_bias.assign(out.output_dim, 0.0);
  const auto& w = model.params.output_weights;
  const auto& b = model.params.output_bias;
  for (std::size_t o = 0; o < out.output_dim; ++o) {
    const bool binary = to.is_binary();
    const std::size_t src = o < num_classes ? o : bg;
    for (std::size_t j = 0; j < h; ++j) {
      out.params.output_weights[o * h + j] = w[src * h + j] - (binary ? w[bg * h + j] : 0.0);
    }
    out.params.output_bias[o] = b[src] - (binary ? b[bg] : 0.0);
  }
  return out;
}

struct TrainResult {
  MlpClassifier model;
  TrainingLog log;
};

/// Stage 1 only: trains every parameter with the schedule's stage-1 loss.
inline TrainResult train_stage1(const LongTailDataset& data, const TwoStageSchedule& sched) {
  sched.validate();
  const LossHead head(sched.stage1_loss, data.class_counts);
  TrainResult r{MlpClassifier::init(data.feature_dim(), sched.hidden_dim, head.num_outputs(), sched.stage1.seed),
                {}};
  r.log.stage2_lr_scale = sched.stage2_lr_scale;
  train_stage(r.model, data, sched.stage1, head, {1, false, false}, r.log);
  return r;
}

/// Stage 2 on top of a stage-1 result: frozen representation, classifier
/// fine-tuned with the stage-2 loss.
inline TrainResult train_stage2(const LongTailDataset& data, const TwoStageSchedule& sched, TrainResult stage1) {
  sched.validate();
  const LossHead from(sched.stage1_loss, data.class_counts);
  const LossHead to(sched.stage2_loss, data.class_counts);
  TrainResult r{adapt_head(stage1.model, from, to), std::move(stage1.log)};
  r.log.stage2_lr_scale = sched.stage2_lr_scale;
  TrainConfig cfg = sched.stage2;
  cfg.base_lr *= sched.stage2_lr_scale;
  train_stage(r.model, data, cfg, to, {2, true, sched.background_retention}, r.log);
  return r;
}

inline TrainResult train_two_stage(const LongTailDataset& data, const TwoStageSchedule& sched) {
  return train_stage2(data, sched, train_stage1(data, sched));
}

}  // namespace acsl
