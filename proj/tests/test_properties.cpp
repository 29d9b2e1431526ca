// Randomised invariants of the losses and metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "acsl/baselines.hpp"
#include "acsl/loss_core.hpp"
#include "acsl/metrics.hpp"

using namespace acsl;

namespace {

struct Case {
  Vector logits;
  SampleLabel label = SampleLabel::background();
};

Case random_case(std::mt19937_64& rng, double scale = 8.0) {
  const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
  std::uniform_real_distribution<double> z(-scale, scale);
  Case out;
  for (std::size_t i = 0; i < c; ++i) out.logits.push_back(z(rng));
  if (std::uniform_real_distribution<double>(0, 1)(rng) > 0.2) {
    out.label = SampleLabel::foreground(std::uniform_int_distribution<std::size_t>(0, c - 1)(rng));
  }
  return out;
}

}  // namespace

TEST(Property, AcslLossNonIncreasingInXi) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 300; ++t) {
    const Case c = random_case(rng);
    double prev = INFINITY;
    for (int s = 0; s <= 40; ++s) {
      const double loss = acsl_loss(c.logits, c.label, {s / 40.0});
      EXPECT_LE(loss, prev);
      prev = loss;
    }
  }
}

TEST(Property, AcslBoundedByBce) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 300; ++t) {
    const Case c = random_case(rng);
    const double xi = std::uniform_real_distribution<double>(0, 1)(rng);
    EXPECT_LE(acsl_loss(c.logits, c.label, {xi}), bce_loss(c.logits, c.label));
    EXPECT_GE(acsl_loss(c.logits, c.label, {xi}), 0.0);
  }
}

TEST(Property, AcslPermutationEquivariant) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 200; ++t) {
    const Case c = random_case(rng);
    std::vector<std::size_t> perm(c.logits.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vector z(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) z[perm[i]] = c.logits[i];
    const SampleLabel label =
        c.label.is_background() ? c.label : SampleLabel::foreground(perm[c.label.index()]);
    const AcslConfig cfg{0.4};
    EXPECT_NEAR(acsl_loss(z, label, cfg), acsl_loss(c.logits, c.label, cfg), 1e-12);
    const Vector g = acsl_grad(z, label, cfg), g0 = acsl_grad(c.logits, c.label, cfg);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(g[perm[i]], g0[i]);
  }
}

TEST(Property, NoNanForBoundedLogits) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 500; ++t) {
    const Case c = random_case(rng, 50.0);
    for (double xi : {0.0, 0.3, 0.9, 1.0}) {
      EXPECT_TRUE(std::isfinite(acsl_loss(c.logits, c.label, {xi})));
      for (double g : acsl_grad(c.logits, c.label, {xi})) EXPECT_TRUE(std::isfinite(g));
    }
    Vector zb = c.logits;
    zb.push_back(50.0);
    EXPECT_TRUE(std::isfinite(softmax_ce_loss(zb, c.label, BackgroundSlot::kLast)));
  }
}

TEST(Property, GradientMaskIsPointwise) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 200; ++t) {
    const Case c = random_case(rng);
    const AcslConfig cfg{0.5};
    const Vector p = sigmoid_probs(c.logits);
    const WeightMask w = acsl_weights(p, c.label, cfg);
    const Vector g = acsl_grad(c.logits, c.label, cfg);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double expected = c.label.is(i) ? p[i] - 1.0 : w[i] * p[i];
      EXPECT_NEAR(g[i], expected, 1e-15);
    }
  }
}

TEST(Property, ApInvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 200; ++t) {
    std::vector<ScoredSample> a, b;
    for (std::size_t i = 0; i < 20; ++i) {
      const double s = u(rng);
      const bool pos = (rng() & 3) == 0;
      a.push_back({s, pos, i});
      b.push_back({std::exp(3.0 * s) + 1.0, pos, i});
    }
    rank(a);
    rank(b);
    const auto x = average_precision(a), y = average_precision(b);
    ASSERT_EQ(x.has_value(), y.has_value());
    if (x) {
      EXPECT_EQ(*x, *y);
      EXPECT_GE(*x, 0.0);
      EXPECT_LE(*x, 1.0);
    }
  }
}

TEST(Property, ClassPermutationPermutesReport) {
  std::mt19937_64 rng(17);
  const std::vector<FrequencyGroup> groups{FrequencyGroup::kRare, FrequencyGroup::kRare, FrequencyGroup::kCommon,
                                           FrequencyGroup::kFrequent, FrequencyGroup::kFrequent};
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::optional<double>> ap;
    for (std::size_t c = 0; c < groups.size(); ++c) ap.push_back(u(rng));
    std::vector<std::size_t> perm(groups.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::optional<double>> ap2(ap.size());
    std::vector<FrequencyGroup> g2(groups.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      ap2[perm[i]] = ap[i];
      g2[perm[i]] = groups[i];
    }
    const auto r1 = group_report(ap, groups), r2 = group_report(ap2, g2);
    EXPECT_NEAR(r1.m_ap, r2.m_ap, 1e-12);
    EXPECT_NEAR(*r1.ap_r, *r2.ap_r, 1e-12);
    EXPECT_NEAR(*r1.ap_c, *r2.ap_c, 1e-12);
    EXPECT_NEAR(*r1.ap_f, *r2.ap_f, 1e-12);
  }
}
