#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cotdub/policy.hpp"
#include "cotdub/preference.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cotdub;

namespace {

PolicyLogProbs equal_point(double v = -3.0) { return {v, v, v - 1.0, v - 1.0, 5}; }

Eigen::VectorXd as_vec(const PolicyLogProbs& lp) {
  Eigen::VectorXd v(4);
  v << lp.lp_theta_c, lp.lp_ref_c, lp.lp_theta_r, lp.lp_ref_r;
  return v;
}

PolicyLogProbs from_vec(const Eigen::VectorXd& v, int len = 5) { return {v[0], v[1], v[2], v[3], len}; }

Eigen::VectorXd as_vec(const LogProbGrad& g) {
  Eigen::VectorXd v(4);
  v << g.d_theta_c, g.d_ref_c, g.d_theta_r, g.d_ref_r;
  return v;
}

ToyPolicy random_policy(std::mt19937_64& rng, Eigen::Index dim, double scale = 0.3) {
  ToyPolicy p(dim);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd theta(p.num_params());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = n(rng);
  p.set_parameters(theta);
  return p;
}

std::vector<PreferenceItem> random_batch(std::mt19937_64& rng, Eigen::Index dim, int n) {
  std::vector<PreferenceItem> batch;
  for (int i = 0; i < n; ++i) {
    PreferenceSample s;
    s.prompt = gen::random_prompt(rng, dim);
    s.gold = gen::random_conclusion(rng);
    s.chosen = {0, s.gold};
    s.rejected = gen::random_response(rng);
    batch.push_back(make_preference_item(std::move(s)));
  }
  return batch;
}

}  // namespace

TEST(DpoLoss, Examples) {
  EXPECT_NEAR(dpo_loss(equal_point(), 0.1), std::log(2.0), 1e-12);
  PolicyLogProbs lp{1.0, 0.0, -1.0, 0.0, 4};
  EXPECT_NEAR(dpo_loss(lp, 1.0), 0.126928, 1e-6);
  EXPECT_NEAR(dpo_loss(lp, 1.0), -std::log(1.0 / (1.0 + std::exp(-2.0))), 1e-12);
  PolicyLogProbs far{400.0, 0.0, -400.0, 0.0, 4};
  EXPECT_LT(dpo_loss(far, 1.0), 1e-300);
  EXPECT_GT(dpo_loss(PolicyLogProbs{-400.0, 0.0, 400.0, 0.0, 4}, 1.0), 799.0);
}

TEST(DpoLoss, RejectsBadInputs) {
  EXPECT_THROW(dpo_loss(equal_point(), 0.0), std::invalid_argument);
  PolicyLogProbs lp = equal_point();
  lp.lp_ref_r = NAN;
  EXPECT_THROW(dpo_loss(lp, 0.1), std::invalid_argument);
}

TEST(DpoLoss, DependsOnlyOnLogRatioDifference) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    PolicyLogProbs lp{n(rng), n(rng), n(rng), n(rng), 3};
    const double base = dpo_loss(lp, 0.7);
    PolicyLogProbs shifted = lp;
    const double c = n(rng);
    shifted.lp_theta_c += c;
    shifted.lp_ref_c += c;
    EXPECT_NEAR(dpo_loss(shifted, 0.7), base, 1e-9);
    shifted = lp;
    shifted.lp_theta_r += c;
    shifted.lp_ref_r += c;
    EXPECT_NEAR(dpo_loss(shifted, 0.7), base, 1e-9);
  }
}

TEST(BcoLoss, Examples) {
  const BCOLoss zero = bco_loss(equal_point(), 0.1, 0.0);
  EXPECT_NEAR(zero.plus, std::log(2.0), 1e-12);
  EXPECT_NEAR(zero.minus, std::log(2.0), 1e-12);
  EXPECT_NEAR(zero.total, 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(zero.total, 2.0 * dpo_loss(equal_point(), 0.1), 1e-12);
  const BCOLoss shifted = bco_loss(equal_point(), 1.0, 0.5);
  EXPECT_NEAR(shifted.plus, 0.974077, 1e-6);
  EXPECT_NEAR(shifted.minus, 0.474077, 1e-6);
}

TEST(GenLoss, Examples) {
  EXPECT_DOUBLE_EQ(gen_loss(0.0, 5), 0.0);
  EXPECT_NEAR(gen_loss(-std::log(2.0) * 4.0, 4), std::log(2.0), 1e-12);
  EXPECT_THROW(gen_loss(-1.0, 0), std::invalid_argument);
}

TEST(MpoTotal, Examples) {
  EXPECT_DOUBLE_EQ(mpo_total(MPOWeights{0, 0, 0, 0, 0}, 1, 2, 3, 4, 5), 0.0);
  EXPECT_DOUBLE_EQ(mpo_total(MPOWeights{}, 1, 2, 3, 4, 5), 15.0);
  EXPECT_THROW(mpo_total(MPOWeights{-1, 0, 0, 0, 0}, 1, 2, 3, 4, 5), std::invalid_argument);
  EXPECT_THROW(mpo_total(MPOWeights{}, NAN, 2, 3, 4, 5), std::invalid_argument);
}

TEST(MpoTotal, LinearInEachComponentAndWeight) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    MPOWeights w{u(rng), u(rng), u(rng), u(rng), u(rng)};
    MPOComponents c{u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double base = mpo_total(w, c);
    MPOComponents c2 = c;
    c2.L_g *= 2.0;
    EXPECT_NEAR(mpo_total(w, c2) - base, w.w_g * c.L_g, 1e-12);
    MPOWeights w2 = w;
    w2.w_f *= 3.0;
    EXPECT_NEAR(mpo_total(w2, c) - base, 2.0 * w.w_f * c.L_f, 1e-12);
  }
}

TEST(PreferenceGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> beta_d(0.05, 2.0);
  for (int i = 0; i < 100; ++i) {
    const PolicyLogProbs lp{n(rng), n(rng), n(rng), n(rng), 5};
    const double beta = beta_d(rng);
    const double delta = n(rng) * 0.3;
    const auto x = as_vec(lp);
    const auto fd_p = oracle::central_diff([&](const Eigen::VectorXd& v) { return dpo_loss(from_vec(v), beta); }, x);
    EXPECT_LT(oracle::rel_err(as_vec(dpo_loss_grad(lp, beta)), fd_p), 1e-4);
    const auto fd_q =
        oracle::central_diff([&](const Eigen::VectorXd& v) { return bco_loss(from_vec(v), beta, delta).total; }, x);
    EXPECT_LT(oracle::rel_err(as_vec(bco_loss_grad(lp, beta, delta)), fd_q), 1e-4);
    const double fd_g = oracle::central_diff_1d([&](double v) { return gen_loss(v, 5); }, lp.lp_theta_c);
    EXPECT_LT(oracle::rel_err(gen_loss_grad(5), fd_g), 1e-4);
  }
}

TEST(ToyPolicy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Eigen::Index dim = 6;
  ToyPolicy policy = random_policy(rng, dim);
  for (int i = 0; i < 10; ++i) {
    const PolicyPrompt prompt = gen::random_prompt(rng, dim);
    const PolicyResponse r = gen::random_response(rng);
    const double a = 0.7, b = -1.3, c = 0.4;
    auto f = [&](const Eigen::VectorXd& th) {
      ToyPolicy p = policy;
      p.set_parameters(th);
      const ResponseEval e = p.evaluate(prompt, r);
      return a * e.log_prob + b * e.p_format + c * e.p_outcome;
    };
    Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.num_params());
    policy.accumulate_gradient(prompt, r, a, b, c, g);
    EXPECT_LT(oracle::rel_err(g, oracle::central_diff(f, policy.parameters())), 1e-4);
  }
}

TEST(MpoStep, UpdateIsNegativeGradientOfTotal) {
  std::mt19937_64 rng(11);
  const Eigen::Index dim = 5;
  const ToyPolicy reference = random_policy(rng, dim);
  ToyPolicy policy = random_policy(rng, dim);
  const auto batch = random_batch(rng, dim, 6);
  for (bool normalize : {false, true}) {
    const DPOConfig cfg{0.5, 0.2, normalize};
    const MPOWeights w{1.0, 0.7, 0.5, 1.3, 0.9};
    ToyPolicy probe = policy;
    const Eigen::VectorXd grad = -mpo_step(probe, reference, batch, cfg, w, 1.0).update;
    auto total = [&](const Eigen::VectorXd& th) {
      ToyPolicy p = policy;
      p.set_parameters(th);
      return mpo_step(p, reference, batch, cfg, w, 0.0).total;
    };
    EXPECT_LT(oracle::rel_err(grad, oracle::central_diff(total, policy.parameters())), 1e-4);
  }
}

TEST(MpoStep, ZeroWeightsLeaveParametersUnchanged) {
  std::mt19937_64 rng(12);
  ToyPolicy policy = random_policy(rng, 4);
  const ToyPolicy reference = policy;
  const Eigen::VectorXd before = policy.parameters();
  const auto batch = random_batch(rng, 4, 8);
  const auto r = mpo_step(policy, reference, batch, DPOConfig{}, MPOWeights{0, 0, 0, 0, 0}, 0.5);
  EXPECT_EQ(policy.parameters(), before);
  EXPECT_DOUBLE_EQ(r.total, 0.0);
  EXPECT_THROW(mpo_step(policy, reference, std::span<const PreferenceItem>(), DPOConfig{}, MPOWeights{}, 0.5),
               std::invalid_argument);
}

TEST(MpoStep, GenerationOnlyEqualsSftStep) {
  std::mt19937_64 rng(13);
  ToyPolicy a = random_policy(rng, 4);
  ToyPolicy b = a;
  const auto batch = random_batch(rng, 4, 8);
  std::vector<SFTExample> sft;
  for (const auto& it : batch) sft.push_back({it.sample.prompt, it.sample.chosen});
  mpo_step(a, a, batch, DPOConfig{}, MPOWeights{0, 0, 1, 0, 0}, 0.3);
  sft_step(b, sft, 0.3);
  EXPECT_LT((a.parameters() - b.parameters()).norm(), 1e-12);
}

TEST(MpoStep, AtReferenceComponentsMatchClosedForms) {
  std::mt19937_64 rng(14);
  ToyPolicy policy = random_policy(rng, 4);
  const ToyPolicy reference = policy;
  const auto batch = random_batch(rng, 4, 5);
  const auto r = mpo_step(policy, reference, batch, DPOConfig{0.1, 0.0, false}, MPOWeights{}, 0.0);
  EXPECT_NEAR(r.components.L_p, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.components.L_q, 2.0 * std::log(2.0), 1e-12);
}

TEST(PreferenceItem, RewardFlagsFollowResponseText) {
  std::mt19937_64 rng(15);
  PreferenceSample s;
  s.prompt = gen::random_prompt(rng, 3);
  s.gold = gen::random_conclusion(rng);
  s.chosen = {0, s.gold};
  s.rejected = {2, s.gold};
  const auto item = make_preference_item(s);
  EXPECT_TRUE(item.chosen_flags.f_true);
  EXPECT_TRUE(item.chosen_flags.o_true);
  EXPECT_FALSE(item.rejected_flags.f_true);
  EXPECT_FALSE(item.rejected_flags.o_true);
}
