#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "acsl/gradcheck.hpp"
#include "acsl/trainer.hpp"
#include "test_support.hpp"

using namespace acsl;

TEST(LearningRate, WarmupMidpoint) {
  TrainConfig c;
  c.base_lr = 0.02;
  c.warmup_iters = 500;
  EXPECT_NEAR(lr_at(250, 0, c), 0.02 * 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(lr_at(0, 0, c), 0.02 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(500, 0, c), 0.02);
}

TEST(LearningRate, StepDecayAtMilestones) {
  TrainConfig c;
  c.warmup_iters = 0;
  EXPECT_DOUBLE_EQ(lr_at(10000, 7, c), c.base_lr);
  EXPECT_NEAR(lr_at(10000, 8, c), c.base_lr * 0.1, 1e-15);
  EXPECT_NEAR(lr_at(10000, 11, c), c.base_lr * 0.01, 1e-16);
}

TEST(Sgd, MomentumAccumulates) {
  TrainConfig c;
  c.weight_decay = 0.0;
  std::vector<double> p{1.0}, v{0.0};
  const std::vector<double> g{0.5};
  sgd_step(p, g, v, 0.1, c);
  sgd_step(p, g, v, 0.1, c);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 * 2.9, 1e-15);
}

TEST(Sgd, WeightDecayPullsTowardZero) {
  TrainConfig c;
  c.momentum = 0.0;
  c.weight_decay = 0.5;
  std::vector<double> p{2.0}, v{0.0};
  sgd_step(p, std::vector<double>{0.0}, v, 0.1, c);
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Sgd, NonFiniteGradientDiverges) {
  TrainConfig c;
  std::vector<double> p{1.0}, v{0.0};
  EXPECT_THROW(sgd_step(p, std::vector<double>{NAN}, v, 0.1, c), TrainingDiverged);
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig c;
  c.base_lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.decay_milestones = {11, 8};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ForwardBackward, MatchesFiniteDifferences) {
  for (const auto& r : check_model_gradients(6, 5)) {
    EXPECT_LT(r.max_rel_error, 1e-5) << r.name;
  }
}

TEST(LossHead, OutputLayout) {
  const std::vector<std::size_t> counts{100, 40, 10};
  EXPECT_EQ(LossHead({LossFamily::kSoftmaxCe, {}, {}, {}}, counts).num_outputs(), 4u);
  EXPECT_EQ(LossHead({LossFamily::kAcsl, {}, {}, {}}, counts).num_outputs(), 3u);
  EXPECT_EQ(LossHead({LossFamily::kGroupSoftmax, {}, {}, {50}}, counts).num_outputs(), 5u);
  EXPECT_EQ(LossHead({LossFamily::kGroupSoftmax, {}, {}, {50}}, counts).scores(Vector(5, 0.0)).size(), 3u);
}

TEST(TwoStage, StageTwoFreezesRepresentation) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  const auto sched = fixtures::tiny_schedule();
  const TrainResult s1 = train_stage1(data, sched);
  const TrainResult s2 = train_stage2(data, sched, s1);
  EXPECT_EQ(s2.model.params.hidden_weights, s1.model.params.hidden_weights);
  EXPECT_EQ(s2.model.params.hidden_bias, s1.model.params.hidden_bias);
  EXPECT_NE(s2.model.params.output_weights, s1.model.params.output_weights);
}

TEST(TwoStage, ZeroEpochSoftmaxStageTwoIsIdentity) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  auto sched = fixtures::tiny_schedule();
  sched.stage2_loss = {LossFamily::kSoftmaxCe, {}, {}, {}};
  sched.stage2.epochs = 0;
  const TrainResult s1 = train_stage1(data, sched);
  EXPECT_EQ(train_stage2(data, sched, s1).model, s1.model);
}

TEST(TwoStage, Deterministic) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  const auto sched = fixtures::tiny_schedule();
  const TrainResult a = train_two_stage(data, sched);
  const TrainResult b = train_two_stage(data, sched);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.log, b.log);
}

TEST(TwoStage, LogRecordsInitialLossAndEveryEpoch) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  const auto sched = fixtures::tiny_schedule();
  const TrainResult r = train_two_stage(data, sched);
  ASSERT_EQ(r.log.rows.size(), 1u + 3u + 1u + 2u);
  EXPECT_EQ(r.log.rows[0].epoch, -1);
  EXPECT_EQ(r.log.rows[4].stage, 2);
  EXPECT_EQ(r.log.rows[4].epoch, -1);
  EXPECT_LT(r.log.rows[3].loss, r.log.rows[0].loss);
  std::ostringstream os;
  write_training_log(os, r.log);
  EXPECT_EQ(os.str().rfind("# stage2_lr_scale=1\nstage\tepoch\titeration\tlr\tloss\n", 0), 0u);
}

TEST(TwoStage, AdaptedBinaryHeadStartsAtLogOdds) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  auto sched = fixtures::tiny_schedule();
  const TrainResult s1 = train_stage1(data, sched);
  const LossHead from(sched.stage1_loss, data.class_counts);
  const LossHead to({LossFamily::kBce, {}, {}, {}}, data.class_counts);
  const MlpClassifier adapted = adapt_head(s1.model, from, to);
  const Vector x(data.feature_dim(), 0.3);
  const Vector z = s1.model.logits(x);
  const Vector a = adapted.logits(x);
  for (std::size_t c = 0; c < data.num_classes(); ++c) EXPECT_NEAR(a[c], z[c] - z.back(), 1e-12);
}

TEST(TwoStage, HugeLearningRateDiverges) {
  const auto data = sample_dataset(fixtures::tiny_spec());
  auto sched = fixtures::tiny_schedule();
  sched.stage1.base_lr = 1e8;
  EXPECT_THROW(train_stage1(data, sched), TrainingDiverged);
}
