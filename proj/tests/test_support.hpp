#pragma once

// Small, fast configurations shared by the trainer and experiment tests.

#include "acsl/experiment.hpp"

namespace acsl::fixtures {

inline DatasetSpec tiny_spec(std::uint64_t seed = 7) {
  DatasetSpec s;
  s.num_classes = 6;
  s.feature_dim = 4;
  s.max_count = 60;
  s.min_count = 4;
  s.confusable_pairs = 2;
  s.test_per_class = 10;
  s.groups = {10, 30};
  s.seed = seed;
  return s;
}

inline TrainConfig tiny_train(std::int64_t epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.decay_milestones = {};
  c.warmup_iters = 5;
  c.batch_size = 16;
  return c;
}

inline TwoStageSchedule tiny_schedule() {
  TwoStageSchedule s;
  s.hidden_dim = 8;
  s.stage1 = tiny_train();
  s.stage2 = tiny_train(2);
  return s;
}

inline ExperimentConfig tiny_experiment(const std::string& out) {
  ExperimentConfig cfg;
  cfg.dataset = tiny_spec();
  cfg.schedule = tiny_schedule();
  cfg.output_dir = out;
  cfg.seed = 7;
  cfg.apply_seed();
  return cfg;
}

}  // namespace acsl::fixtures
