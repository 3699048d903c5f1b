#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cotdub/flow_matching.hpp"
#include "cotdub/flow_models.hpp"
#include "oracles.hpp"
#include "toy_tasks.hpp"

using namespace cotdub;

TEST(OtPath, Examples) {
  const Matrix x0 = Matrix::Constant(1, 1, 0.0);
  const Matrix x1 = Matrix::Constant(1, 1, 2.0);
  const PathSample s = sample_ot_path(x0, x1, 0.25, 0.1);
  EXPECT_DOUBLE_EQ(s.x_tau(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.u_target(0, 0), 2.0);
  EXPECT_THROW(sample_ot_path(Matrix::Zero(2, 1), Matrix::Zero(1, 1), 0.5, 0.0), std::invalid_argument);
}

TEST(OtPath, EndpointsAndConstantVelocity) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Matrix x0 = toy::random_matrix(rng, 4, 3);
    const Matrix x1 = toy::random_matrix(rng, 4, 3);
    const double smin = 0.05 * (i % 3);
    EXPECT_EQ(sample_ot_path(x0, x1, 0.0, smin).x_tau, x0);
    EXPECT_LT((sample_ot_path(x0, x1, 1.0, 0.0).x_tau - x1).norm(), 1e-15);
    EXPECT_EQ(sample_ot_path(x0, x1, 1.0, 0.0).u_target, x1 - x0);
    const Matrix u = sample_ot_path(x0, x1, 0.0, smin).u_target;
    for (double tau = 0.1; tau <= 1.0; tau += 0.1) {
      const PathSample s = sample_ot_path(x0, x1, tau, smin);
      EXPECT_EQ(s.u_target, u);
      // u is the time derivative of the path
      const Matrix fd = (sample_ot_path(x0, x1, std::min(tau + 1e-6, 1.0), smin).x_tau -
                         sample_ot_path(x0, x1, tau - 1e-6, smin).x_tau) /
                        (std::min(tau + 1e-6, 1.0) - (tau - 1e-6));
      EXPECT_LT((fd - u).norm(), 1e-6);
    }
  }
}

TEST(CfmLoss, PerfectModelOnDegenerateDataIsZero) {
  const Matrix target = (Matrix(3, 2) << 1.0, -2.0, 0.5, 3.0, 0.0, 1.0).finished();
  const FunctionVelocityModel exact(
      [&](const Matrix& x, double tau, const DubbingConditions&) -> Matrix { return (target - x) / (1.0 - tau); });
  std::vector<FeatureSeq> batch(8, FeatureSeq(target, 0.01));
  std::vector<DubbingConditions> conds(8);
  std::mt19937_64 rng(2);
  const double loss = cfm_loss(exact, std::span<const FeatureSeq>(batch), std::span<const DubbingConditions>(conds),
                               rng, FlowConfig{0.0, 32});
  EXPECT_NEAR(loss, 0.0, 1e-18);
}

TEST(CfmLoss, NonNegativeAndPositiveForWrongModel) {
  std::mt19937_64 rng(3);
  const auto shape = toy::small_shape();
  for (int i = 0; i < 20; ++i) {
    const auto model = toy::random_flow(rng, shape);
    std::vector<FeatureSeq> batch{FeatureSeq(toy::random_matrix(rng, 5, shape.dim), 0.01)};
    std::vector<DubbingConditions> conds{toy::random_conditions(rng, shape, 0.5)};
    EXPECT_GT(cfm_loss(model, std::span<const FeatureSeq>(batch), std::span<const DubbingConditions>(conds), rng),
              0.0);
  }
  std::vector<FeatureSeq> none;
  std::vector<DubbingConditions> no_conds;
  const auto model = toy::random_flow(rng, shape);
  EXPECT_THROW(cfm_loss(model, std::span<const FeatureSeq>(none), std::span<const DubbingConditions>(no_conds), rng),
               std::invalid_argument);
}

TEST(CfmLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const auto shape = toy::small_shape();
  for (int trial = 0; trial < 6; ++trial) {
    auto model = toy::random_flow(rng, shape);
    std::vector<FeatureSeq> batch;
    std::vector<DubbingConditions> conds;
    for (int b = 0; b < 3; ++b) {
      batch.emplace_back(toy::random_matrix(rng, 4 + b, shape.dim), 0.01);
      conds.push_back(toy::random_conditions(rng, shape, 0.6));
    }
    const std::uint64_t seed = rng();
    auto loss_at = [&](const Vector& th) {
      auto m = model;
      m.set_parameters(th);
      std::mt19937_64 r(seed);
      return cfm_objective(m, std::span<const FeatureSeq>(batch), std::span<const DubbingConditions>(conds), r,
                           FlowConfig{});
    };
    Vector grad = Vector::Zero(model.num_params());
    std::mt19937_64 r(seed);
    cfm_objective(model, std::span<const FeatureSeq>(batch), std::span<const DubbingConditions>(conds), r,
                  FlowConfig{}, &grad);
    EXPECT_LT(oracle::rel_err(grad, oracle::central_diff(loss_at, model.parameters())), 1e-4);
  }
}

TEST(ConditionalFlowField, FrozenGroupsGetNoGradient) {
  std::mt19937_64 rng(5);
  const auto shape = toy::small_shape();
  auto model = toy::random_flow(rng, shape);
  const DubbingConditions c = toy::random_conditions(rng, shape);
  const Matrix x = toy::random_matrix(rng, 4, shape.dim);
  const Matrix up = toy::random_matrix(rng, 4, shape.dim);
  Vector all = Vector::Zero(model.num_params());
  model.accumulate_gradient(x, 0.3, c, up, all);
  model.set_trainable(false, {true, true, false, false});
  Vector part = Vector::Zero(model.num_params());
  model.accumulate_gradient(x, 0.3, c, up, part);
  const Eigen::Index trunk = 2 * shape.trunk_knots * shape.dim;
  EXPECT_EQ(part.head(trunk).norm(), 0.0);
  EXPECT_GT(part.norm(), 0.0);
  EXPECT_LT(part.norm(), all.norm());
}

TEST(ConditionalFlowField, ZeroBranchesIgnoreConditions) {
  std::mt19937_64 rng(6);
  const auto shape = toy::small_shape();
  ConditionalFlowField model(shape);
  Vector theta = Vector::Zero(model.num_params());
  theta.head(2 * shape.trunk_knots * shape.dim) = toy::random_vector(rng, 2 * shape.trunk_knots * shape.dim, 1.0);
  model.set_parameters(theta);
  const Matrix x = toy::random_matrix(rng, 5, shape.dim);
  const DubbingConditions none;
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(model.evaluate(x, 0.37, toy::random_conditions(rng, shape)), model.evaluate(x, 0.37, none));
  }
}

TEST(DurationLoss, Examples) {
  EXPECT_DOUBLE_EQ(duration_loss(2.0, 2.0), 0.0);
  EXPECT_NEAR(duration_loss(2.0, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(duration_loss(1.0, 2.0), std::log(2.0), 1e-12);
  EXPECT_THROW(duration_loss(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(duration_loss(1.0, -1.0), std::invalid_argument);
}

TEST(DurationLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.2, 5.0);
  for (int i = 0; i < 100; ++i) {
    const double p = u(rng);
    const double t = u(rng);
    if (std::abs(std::log(p / t)) < 1e-3) continue;
    const double fd = oracle::central_diff_1d([&](double q) { return duration_loss(q, t); }, p);
    EXPECT_LT(oracle::rel_err(duration_loss_grad(p, t), fd), 1e-4);
  }
}

namespace {

std::vector<Stage2Item> stage2_batch(std::mt19937_64& rng, const ConditionalFlowShape& shape) {
  std::vector<Stage2Item> batch;
  for (int b = 0; b < 3; ++b) {
    DubbingConditions c = toy::random_conditions(rng, shape);
    Stage2Item it{FeatureSeq(toy::random_matrix(rng, 5, shape.dim), 0.01), c, *c.visual, c.conclusion,
                  std::uniform_real_distribution<double>(0.5, 3.0)(rng)};
    c = toy::random_conditions(rng, shape, 0.5);
    it.conditions = c;
    batch.push_back(std::move(it));
  }
  return batch;
}

}  // namespace

TEST(Stage2Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto shape = toy::small_shape();
  for (int trial = 0; trial < 6; ++trial) {
    auto model = toy::random_flow(rng, shape);
    LogLinearDurationPredictor dur;
    dur.set_parameters(toy::random_vector(rng, dur.parameters().size(), 0.3));
    const auto batch = stage2_batch(rng, shape);
    const std::uint64_t seed = rng();
    auto total_at = [&](const Vector& th, const Vector& w) {
      auto m = model;
      m.set_parameters(th);
      auto d = dur;
      d.set_parameters(w);
      std::mt19937_64 r(seed);
      return stage2_loss(m, d, std::span<const Stage2Item>(batch), r).total;
    };
    std::mt19937_64 r(seed);
    const Stage2Loss l = stage2_loss(model, dur, std::span<const Stage2Item>(batch), r, FlowConfig{}, true);
    EXPECT_NEAR(l.total, l.cfm_part + l.dur_part, 1e-12);
    const Vector fd_m =
        oracle::central_diff([&](const Vector& th) { return total_at(th, dur.parameters()); }, model.parameters());
    const Vector fd_d =
        oracle::central_diff([&](const Vector& w) { return total_at(model.parameters(), w); }, dur.parameters());
    EXPECT_LT(oracle::rel_err(l.model_grad, fd_m), 1e-4);
    EXPECT_LT(oracle::rel_err(l.duration_grad, fd_d), 1e-4);
  }
}

namespace {

class ExactDuration final : public DurationModel {
 public:
  double predict_seconds(const VisualFeatureSeq& v, const Nullable<ConclusionConditions>&) const override {
    return v.duration();
  }
};

}  // namespace

TEST(Stage2Loss, ExactDurationLeavesCfmPart) {
  std::mt19937_64 rng(9);
  const auto shape = toy::small_shape();
  const auto model = toy::random_flow(rng, shape);
  auto batch = stage2_batch(rng, shape);
  for (auto& it : batch) it.true_duration = it.duration_visual.duration();
  std::mt19937_64 r(1);
  const Stage2Loss l = stage2_loss(model, ExactDuration{}, std::span<const Stage2Item>(batch), r);
  EXPECT_EQ(l.dur_part, 0.0);
  EXPECT_EQ(l.total, l.cfm_part);
}

TEST(Stage2Loss, PerfectModelOnZeroVarianceDataIsZero) {
  const FunctionVelocityModel exact(
      [](const Matrix& x, double tau, const DubbingConditions&) -> Matrix { return -x / (1.0 - tau); });
  std::vector<Stage2Item> batch;
  for (int b = 0; b < 4; ++b) {
    VisualFeatureSeq v{Matrix::Zero(10 + b, 2), 25.0};
    batch.push_back({FeatureSeq(Matrix::Zero(3, 2), 0.01), {}, v, kNull, v.duration()});
  }
  std::mt19937_64 r(2);
  const Stage2Loss l = stage2_loss(exact, ExactDuration{}, std::span<const Stage2Item>(batch), r, FlowConfig{0.0, 8});
  EXPECT_NEAR(l.total, 0.0, 1e-18);
}

TEST(GaussianTransport, TrainedLossApproachesIrreducibleVariance) {
  const double mean = 2.0, std = 0.5;
  const auto fit = toy::fit_gaussian(mean, std, 3000, 11);
  const oracle::GaussianPath path{mean, std, 1e-4};
  std::mt19937_64 rng(12);
  const auto batch = toy::gaussian_batch(rng, 4096, 16, mean, std);
  const std::vector<DubbingConditions> conds(batch.size());
  const double loss =
      cfm_loss(fit.model, std::span<const FeatureSeq>(batch), std::span<const DubbingConditions>(conds), rng);
  const double floor = path.irreducible_loss();
  EXPECT_GE(loss, 0.97 * floor);
  EXPECT_LE(loss, 1.10 * floor) << "irreducible " << floor;
  for (double tau : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(fit.model.slope(tau)[0], path.slope(tau), 0.15) << tau;
    EXPECT_NEAR(fit.model.offset(tau)[0], path.offset(tau), 0.15) << tau;
  }
  const Vector xs = toy::sample_1d(fit.model, 4096, 100, 13);
  const double m = xs.mean();
  const double s = std::sqrt((xs.array() - m).square().sum() / (xs.size() - 1));
  EXPECT_NEAR(m, mean, 0.05 * mean);
  EXPECT_NEAR(s, std, 0.05 * std);
}

TEST(Training, CfmLossDecreases) {
  const auto fit = toy::fit_gaussian(-1.0, 0.3, 500, 14);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += fit.losses[i];
    tail += fit.losses[fit.losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Adam, MinimizesQuadratic) {
  Adam opt{0.05};
  Vector x = Vector::Constant(3, 4.0);
  for (int i = 0; i < 2000; ++i) opt.step(x, 2.0 * (x - Vector::Constant(3, 1.0)));
  EXPECT_LT((x - Vector::Constant(3, 1.0)).norm(), 1e-3);
}
