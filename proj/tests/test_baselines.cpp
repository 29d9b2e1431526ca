#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "acsl/baselines.hpp"
#include "acsl/loss_core.hpp"

using acsl::BackgroundSlot;
using acsl::GroupPartition;
using acsl::SampleLabel;
using acsl::Vector;

TEST(Softmax, SumsToOne) {
  const Vector p = acsl::softmax(Vector{1000.0, 999.0, -5.0});
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_GT(p[0], p[1]);
}

TEST(SoftmaxCe, Value) {
  const Vector z{1.5, -0.5, 0.25, 2.0};
  EXPECT_NEAR(acsl::softmax_ce_loss(z, SampleLabel::foreground(2), BackgroundSlot::kNone), 2.371860395306457909,
              1e-14);
}

TEST(SoftmaxCe, BackgroundTargetsLastSlot) {
  const Vector z{1.5, -0.5, 0.25, 2.0};
  const double bg = acsl::softmax_ce_loss(z, SampleLabel::background(), BackgroundSlot::kLast);
  EXPECT_NEAR(bg, acsl::softmax_ce_loss(z, SampleLabel::foreground(3), BackgroundSlot::kNone), 1e-15);
  EXPECT_THROW(acsl::softmax_ce_loss(z, SampleLabel::background(), BackgroundSlot::kNone), acsl::InvalidInput);
}

TEST(SoftmaxCe, GradientSumsToZero) {
  const Vector g = acsl::softmax_ce_grad(Vector{0.1, 0.7, -2.0}, SampleLabel::foreground(0), BackgroundSlot::kNone);
  EXPECT_NEAR(g[0] + g[1] + g[2], 0.0, 1e-15);
  EXPECT_LT(g[0], 0.0);
}

TEST(Eql, TailNegativesIgnoredForForeground) {
  const std::vector<std::size_t> counts{1000, 50, 5};
  const auto mask = acsl::eql_weights(SampleLabel::foreground(0), counts, {100.0});
  EXPECT_EQ(mask, (acsl::WeightMask{1, 0, 0}));
  EXPECT_EQ(acsl::eql_weights(SampleLabel::foreground(2), counts, {100.0}), (acsl::WeightMask{1, 0, 1}));
}

TEST(Eql, BackgroundKeepsEverything) {
  const std::vector<std::size_t> counts{1000, 50, 5};
  EXPECT_EQ(acsl::eql_weights(SampleLabel::background(), counts, {100.0}), (acsl::WeightMask{1, 1, 1}));
}

TEST(Eql, ZeroThresholdEqualsBce) {
  const std::vector<std::size_t> counts{1000, 50, 5};
  const Vector z{0.2, -0.4, 1.3};
  EXPECT_EQ(acsl::eql_loss(z, SampleLabel::foreground(1), counts, {0.0}),
            acsl::bce_loss(z, SampleLabel::foreground(1)));
}

TEST(Eql, RejectsNegativeThreshold) {
  const std::vector<std::size_t> counts{10, 5};
  EXPECT_THROW(acsl::eql_weights(SampleLabel::foreground(0), counts, {-1.0}), acsl::InvalidInput);
}

TEST(GroupPartition, DividingLinesByCount) {
  const std::vector<std::size_t> counts{1000, 500, 499, 5};
  const GroupPartition part = GroupPartition::from_counts(counts, {500});
  EXPECT_EQ(part.num_groups(), 2u);
  EXPECT_EQ(part.group_of(0), 1u);
  EXPECT_EQ(part.group_of(1), 1u);
  EXPECT_EQ(part.group_of(2), 0u);
  EXPECT_EQ(part.group_of(3), 0u);
  EXPECT_EQ(part.num_outputs(), 6u);
}

TEST(GroupPartition, RejectsEmptyGroupAndUnsortedLines) {
  const std::vector<std::size_t> counts{1000, 500};
  EXPECT_THROW(GroupPartition::from_counts(counts, {2000}), acsl::ConfigError);
  EXPECT_THROW(GroupPartition::from_counts(counts, {600, 550}), acsl::ConfigError);
}

TEST(GroupSoftmax, TwoSingletonGroupsAtZero) {
  // Each class sits alone with its others slot: two binary softmaxes.
  const std::vector<std::size_t> counts{100, 10};
  const GroupPartition part = GroupPartition::from_counts(counts, {50});
  const Vector z(part.num_outputs(), 0.0);
  EXPECT_NEAR(acsl::group_softmax_loss(z, SampleLabel::foreground(0), part), 2.0 * std::log(2.0), 1e-15);
}

TEST(GroupSoftmax, SingleGroupEqualsSoftmaxCe) {
  const Vector z{0.3, -1.1, 2.2, 0.0};
  const GroupPartition part = GroupPartition::single_group(4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto label = SampleLabel::foreground(k);
    EXPECT_NEAR(acsl::group_softmax_loss(z, label, part), acsl::softmax_ce_loss(z, label, BackgroundSlot::kNone),
                1e-12);
  }
}

TEST(GroupSoftmax, BackgroundTargetsEveryOthersSlot) {
  const std::vector<std::size_t> counts{100, 10};
  const GroupPartition part = GroupPartition::from_counts(counts, {50});
  const Vector z{0.0, 0.0, 3.0, 3.0};
  const double per_group = std::log1p(std::exp(-3.0));
  EXPECT_NEAR(acsl::group_softmax_loss(z, SampleLabel::background(), part), 2.0 * per_group, 1e-14);
}

TEST(GroupSoftmax, ProbsSumToOnePerGroup) {
  const std::vector<std::size_t> counts{1000, 300, 40, 8};
  const GroupPartition part = GroupPartition::from_counts(counts, {100});
  const Vector z{0.5, -0.2, 1.5, 0.1, -1.0, 0.3};
  const Vector p = acsl::group_softmax_probs(z, part);
  for (std::size_t g = 0; g < part.num_groups(); ++g) {
    double sum = 0.0;
    for (std::size_t s : part.slots(g)) sum += p[s];
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}
