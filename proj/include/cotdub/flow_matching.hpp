#pragma once

// Optimal-transport conditional flow matching.
//
//   x_tau = (1 - (1 - sigma_min) tau) x0 + tau x1
//   u     = x1 - (1 - sigma_min) x0
//
// and the regression of a velocity model onto u, with tau ~ U[0, 1] and
// x0 ~ N(0, I) entrywise.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "cotdub/conditions.hpp"
#include "cotdub/features.hpp"

namespace cotdub {

struct FlowConfig {
  double sigma_min = 1e-4;
  int ode_steps = 32;

  void validate() const {
    if (!(sigma_min >= 0.0 && sigma_min < 1.0)) throw std::invalid_argument("FlowConfig: sigma_min must be in [0, 1)");
    if (ode_steps < 1) throw std::invalid_argument("FlowConfig: ode_steps must be >= 1");
  }
};

struct PathSample {
  double tau = 0.0;
  Matrix x_tau;
  Matrix u_target;
};

inline PathSample sample_ot_path(const Matrix& x0, const Matrix& x1, double tau, double sigma_min) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw std::invalid_argument("sample_ot_path: shape mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("sample_ot_path: tau must be in [0, 1]");
  if (!(sigma_min >= 0.0 && sigma_min < 1.0)) throw std::invalid_argument("sample_ot_path: sigma_min must be in [0, 1)");
  PathSample s;
  s.tau = tau;
  s.x_tau = (1.0 - (1.0 - sigma_min) * tau) * x0 + tau * x1;
  s.u_target = x1 - (1.0 - sigma_min) * x0;
  return s;
}

/// Velocity field v(x, tau; conditions). The output has the shape of x and
/// every condition slot may be null.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;

  virtual Matrix evaluate(const Matrix& x, double tau, const DubbingConditions& c) const = 0;

  virtual Vector parameters() const { return {}; }
  virtual void set_parameters(const Vector& theta) {
    if (theta.size() != 0) throw std::invalid_argument("VelocityModel: model has no parameters");
  }

  /// grad += d/dtheta sum(upstream .* evaluate(x, tau, c)).
  virtual void accumulate_gradient(const Matrix& /*x*/, double /*tau*/, const DubbingConditions& /*c*/,
                                   const Matrix& /*upstream*/, Eigen::Ref<Vector> /*grad*/) const {}
};

/// Parameter-free velocity model backed by a callable.
class FunctionVelocityModel final : public VelocityModel {
 public:
  using Fn = std::function<Matrix(const Matrix&, double, const DubbingConditions&)>;
  explicit FunctionVelocityModel(Fn fn) : fn_(std::move(fn)) {}
  Matrix evaluate(const Matrix& x, double tau, const DubbingConditions& c) const override { return fn_(x, tau, c); }

 private:
  Fn fn_;
};

inline Matrix checked_velocity(const VelocityModel& model, const Matrix& x, double tau, const DubbingConditions& c) {
  Matrix v = model.evaluate(x, tau, c);
  if (v.rows() != x.rows() || v.cols() != x.cols()) {
    throw std::runtime_error("velocity model returned a " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                             " field for a " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " input");
  }
  return v;
}

namespace detail {

template <class Rng>
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  }
  return m;
}

}  // namespace detail

/// Monte-Carlo CFM loss: batch mean of the per-entry mean squared error
/// between the model velocity and the path target. When `grad` is non-null
/// the parameter gradient is accumulated into it. Random draws per item:
/// tau first, then x0 row-major.
template <class Rng>
double cfm_objective(const VelocityModel& model, std::span<const FeatureSeq> x1_batch,
                     std::span<const DubbingConditions> conds_batch, Rng& rng, const FlowConfig& cfg,
                     Vector* grad = nullptr) {
  if (x1_batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
  if (x1_batch.size() != conds_batch.size()) throw std::invalid_argument("cfm_loss: batch / condition size mismatch");
  cfg.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double inv_b = 1.0 / static_cast<double>(x1_batch.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < x1_batch.size(); ++b) {
    const Matrix& x1 = x1_batch[b].frames;
    const double tau = u01(rng);
    const Matrix x0 = detail::standard_normal(x1.rows(), x1.cols(), rng);
    const PathSample path = sample_ot_path(x0, x1, tau, cfg.sigma_min);
    const Matrix v = checked_velocity(model, path.x_tau, tau, conds_batch[b]);
    const Matrix diff = v - path.u_target;
    const double n = static_cast<double>(diff.size());
    loss += inv_b * diff.squaredNorm() / n;
    if (grad) model.accumulate_gradient(path.x_tau, tau, conds_batch[b], (2.0 * inv_b / n) * diff, *grad);
  }
  return loss;
}

template <class Rng>
double cfm_loss(const VelocityModel& model, std::span<const FeatureSeq> x1_batch,
                std::span<const DubbingConditions> conds_batch, Rng& rng, const FlowConfig& cfg = {}) {
  return cfm_objective(model, x1_batch, conds_batch, rng, cfg, nullptr);
}

// ---------------------------------------------------------------------------
// Duration

/// L1 distance in log-seconds.
inline double duration_loss(double pred_dur, double true_dur) {
  if (!(pred_dur > 0.0) || !(true_dur > 0.0) || !std::isfinite(pred_dur) || !std::isfinite(true_dur)) {
    throw std::invalid_argument("duration_loss: durations must be positive and finite");
  }
  return std::abs(std::log(pred_dur) - std::log(true_dur));
}

/// d/d pred_dur of duration_loss (zero at equality).
inline double duration_loss_grad(double pred_dur, double true_dur) {
  const double d = std::log(pred_dur) - std::log(true_dur);
  if (d == 0.0) return 0.0;
  return (d > 0.0 ? 1.0 : -1.0) / pred_dur;
}

/// Maps (visual features, conclusion) to a duration in seconds.
class DurationModel {
 public:
  virtual ~DurationModel() = default;
  virtual double predict_seconds(const VisualFeatureSeq& visual, const Nullable<ConclusionConditions>& c) const = 0;
  virtual Vector parameters() const { return {}; }
  virtual void set_parameters(const Vector&) {}
  /// grad += d_pred * d(predict_seconds)/dtheta.
  virtual void accumulate_gradient(const VisualFeatureSeq&, const Nullable<ConclusionConditions>&, double /*d_pred*/,
                                   Eigen::Ref<Vector> /*grad*/) const {}
};

// ---------------------------------------------------------------------------
// Stage-2 composite objective

struct Stage2Item {
  FeatureSeq target;
  DubbingConditions conditions;       // what the velocity model sees (possibly dropped)
  VisualFeatureSeq duration_visual;   // duration predictor inputs, never dropped
  Nullable<ConclusionConditions> duration_conclusion;
  double true_duration = 1.0;
};

struct Stage2Loss {
  double total = 0.0;
  double cfm_part = 0.0;
  double dur_part = 0.0;
  Vector model_grad;
  Vector duration_grad;
};

/// total = CFM part + mean duration loss. Gradients are filled when
/// `with_grad` is set.
template <class Rng>
Stage2Loss stage2_loss(const VelocityModel& model, const DurationModel& dur, std::span<const Stage2Item> batch, Rng& rng,
                       const FlowConfig& cfg = {}, bool with_grad = false) {
  if (batch.empty()) throw std::invalid_argument("stage2_loss: empty batch");
  std::vector<FeatureSeq> targets;
  std::vector<DubbingConditions> conds;
  targets.reserve(batch.size());
  conds.reserve(batch.size());
  for (const auto& it : batch) {
    targets.push_back(it.target);
    conds.push_back(it.conditions);
  }
  Stage2Loss out;
  if (with_grad) {
    out.model_grad = Vector::Zero(model.parameters().size());
    out.duration_grad = Vector::Zero(dur.parameters().size());
  }
  out.cfm_part = cfm_objective(model, std::span<const FeatureSeq>(targets), std::span<const DubbingConditions>(conds),
                               rng, cfg, with_grad ? &out.model_grad : nullptr);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& it : batch) {
    const double pred = dur.predict_seconds(it.duration_visual, it.duration_conclusion);
    out.dur_part += inv_b * duration_loss(pred, it.true_duration);
    if (with_grad) {
      dur.accumulate_gradient(it.duration_visual, it.duration_conclusion,
                              inv_b * duration_loss_grad(pred, it.true_duration), out.duration_grad);
    }
  }
  out.total = out.cfm_part + out.dur_part;
  return out;
}

}  // namespace cotdub
