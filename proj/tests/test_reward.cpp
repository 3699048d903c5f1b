#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cotdub/mutation.hpp"
#include "cotdub/reward.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cotdub;

TEST(OutcomeCheck, SceneOnly) {
  Conclusion a;
  Conclusion b;
  a.scene = b.scene = SceneType::dialogue;
  a.attributes.gender = Gender::male;
  b.attributes.gender = Gender::female;
  EXPECT_TRUE(outcome_check(a, b));
  a.scene = SceneType::monologue;
  b.scene = SceneType::narration;
  EXPECT_FALSE(outcome_check(a, b));
  const auto flags = attribute_check(a, b);
  EXPECT_FALSE(flags.gender);
  EXPECT_TRUE(flags.age);
}

TEST(FormatLoss, Examples) {
  EXPECT_NEAR(format_loss(0.5, true), std::log(2.0), 1e-12);
  EXPECT_NEAR(format_loss(1.0 - kProbEpsilon, true), 0.0, 1e-6);
  EXPECT_NEAR(format_loss(0.2, false), 0.223144, 1e-6);
  EXPECT_NEAR(format_loss(0.2, false), -std::log(0.8), 1e-12);
}

TEST(OutcomeLoss, Examples) {
  EXPECT_NEAR(outcome_loss(0.5, false), std::log(2.0), 1e-12);
  EXPECT_NEAR(outcome_loss(0.9, true), 0.105361, 1e-6);
}

TEST(Losses, ClampKeepsValuesFinite) {
  for (double p : {0.0, 1.0, -3.0, 4.0, 1e-300}) {
    EXPECT_TRUE(std::isfinite(format_loss(p, true)));
    EXPECT_TRUE(std::isfinite(format_loss(p, false)));
  }
  EXPECT_THROW(format_loss(std::nan(""), true), std::invalid_argument);
  EXPECT_THROW(outcome_loss(INFINITY, true), std::invalid_argument);
}

TEST(Losses, MonotoneAndConvexOnGrid) {
  const int n = 200;
  std::vector<double> l1, l0;
  for (int i = 1; i < n; ++i) {
    const double p = static_cast<double>(i) / n;
    l1.push_back(format_loss(p, true));
    l0.push_back(outcome_loss(p, false));
  }
  for (std::size_t i = 1; i < l1.size(); ++i) {
    EXPECT_LT(l1[i], l1[i - 1]);
    EXPECT_GT(l0[i], l0[i - 1]);
  }
  for (std::size_t i = 1; i + 1 < l1.size(); ++i) {
    EXPECT_GE(l1[i - 1] + l1[i + 1] - 2.0 * l1[i], -1e-12);
    EXPECT_GE(l0[i - 1] + l0[i + 1] - 2.0 * l0[i], -1e-12);
  }
}

TEST(Losses, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 200; ++i) {
    const double p = u(rng);
    for (bool y : {false, true}) {
      const double fd = oracle::central_diff_1d([&](double q) { return format_loss(q, y); }, p);
      EXPECT_LT(oracle::rel_err(format_loss_grad(p, y), fd), 1e-4);
      const double fd_o = oracle::central_diff_1d([&](double q) { return outcome_loss(q, y); }, p);
      EXPECT_LT(oracle::rel_err(outcome_loss_grad(p, y), fd_o), 1e-4);
    }
  }
  EXPECT_DOUBLE_EQ(format_loss_grad(0.5, true), -2.0);
}

TEST(ScoreTrace, Examples) {
  std::mt19937_64 rng(8);
  CoTTrace t = gen::random_trace(rng);
  t.conclusion.scene = SceneType::monologue;
  Conclusion gold = t.conclusion;
  const std::string text = render_trace(t);
  EXPECT_TRUE(score_trace(text, gold).f_true);
  EXPECT_TRUE(score_trace(text, gold).o_true);
  gold.scene = SceneType::dialogue;
  EXPECT_TRUE(score_trace(text, gold).f_true);
  EXPECT_FALSE(score_trace(text, gold).o_true);
  gold.scene = SceneType::monologue;
  const std::string broken = apply_mutation(text, Mutation::delete_tag, 5);
  ASSERT_NE(broken.find("scene=monologue"), std::string::npos);
  EXPECT_FALSE(score_trace(broken, gold).f_true);
  EXPECT_FALSE(score_trace(broken, gold).o_true);
}

TEST(ScoreTrace, NeverOutcomeWithoutFormat) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const CoTTrace t = gen::random_trace(rng);
    std::string text = render_trace(t);
    if (i % 2) text = apply_mutation(text, kAllMutations[i % 5], i);
    const RewardFlags f = score_trace(text, t.conclusion);
    EXPECT_FALSE(!f.f_true && f.o_true);
  }
}
