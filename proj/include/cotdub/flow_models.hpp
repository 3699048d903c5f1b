#pragma once

// Desk-scale velocity and duration models.
//
// Time dependence uses piecewise-linear "hat" functions on a uniform knot grid
// over [0, 1], so every model here is linear in its parameters for fixed
// (x, tau, conditions).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotdub/conditions.hpp"
#include "cotdub/flow_matching.hpp"

namespace cotdub {

/// Values of the K hat functions at tau (at most two are non-zero).
inline Vector hat_basis(double tau, Eigen::Index knots) {
  if (knots < 2) throw std::invalid_argument("hat_basis: need at least 2 knots");
  Vector h = Vector::Zero(knots);
  const double s = std::clamp(tau, 0.0, 1.0) * static_cast<double>(knots - 1);
  auto k = static_cast<Eigen::Index>(std::floor(s));
  if (k >= knots - 1) k = knots - 2;
  const double frac = s - static_cast<double>(k);
  h[k] = 1.0 - frac;
  h[k + 1] = frac;
  return h;
}

/// v(x, tau)[f, d] = a_d(tau) x[f, d] + b_d(tau), ignoring all conditions.
class AffineFlowField final : public VelocityModel {
 public:
  AffineFlowField(Eigen::Index dim, Eigen::Index knots)
      : dim_(dim), knots_(knots), a_(Matrix::Zero(knots, dim)), b_(Matrix::Zero(knots, dim)) {
    if (dim < 1 || knots < 2) throw std::invalid_argument("AffineFlowField: bad shape");
  }

  Eigen::Index dim() const { return dim_; }
  Eigen::Index knots() const { return knots_; }
  Eigen::Index num_params() const { return 2 * knots_ * dim_; }

  /// a(tau), b(tau) for each dimension.
  Vector slope(double tau) const { return (hat_basis(tau, knots_).transpose() * a_).transpose(); }
  Vector offset(double tau) const { return (hat_basis(tau, knots_).transpose() * b_).transpose(); }

  Matrix evaluate(const Matrix& x, double tau, const DubbingConditions&) const override {
    if (x.cols() != dim_) throw std::invalid_argument("AffineFlowField: input width mismatch");
    const Vector a = slope(tau);
    const Vector b = offset(tau);
    return (x.array().rowwise() * a.transpose().array()).rowwise() + b.transpose().array();
  }

  Vector parameters() const override {
    Vector p(num_params());
    p << Eigen::Map<const Vector>(a_.data(), a_.size()), Eigen::Map<const Vector>(b_.data(), b_.size());
    return p;
  }

  void set_parameters(const Vector& theta) override {
    if (theta.size() != num_params()) throw std::invalid_argument("AffineFlowField: parameter size mismatch");
    a_ = Eigen::Map<const Matrix>(theta.data(), knots_, dim_);
    b_ = Eigen::Map<const Matrix>(theta.data() + a_.size(), knots_, dim_);
  }

  void accumulate_gradient(const Matrix& x, double tau, const DubbingConditions&, const Matrix& upstream,
                           Eigen::Ref<Vector> grad) const override {
    const Vector h = hat_basis(tau, knots_);
    const Eigen::RowVectorXd gx = (upstream.array() * x.array()).colwise().sum();
    const Eigen::RowVectorXd g1 = upstream.colwise().sum();
    Eigen::Map<Matrix> ga(grad.data(), knots_, dim_);
    Eigen::Map<Matrix> gb(grad.data() + knots_ * dim_, knots_, dim_);
    ga.noalias() += h * gx;
    gb.noalias() += h * g1;
  }

 private:
  Eigen::Index dim_;
  Eigen::Index knots_;
  Matrix a_;  // knots x dim
  Matrix b_;
};

// ---------------------------------------------------------------------------

enum class ConditionSlot : std::size_t { visual = 0, conclusion = 1, transcript = 2, prompt = 3 };
inline constexpr std::size_t kConditionSlots = 4;

struct ConditionalFlowShape {
  Eigen::Index dim = 12;           // feature width D
  Eigen::Index trunk_knots = 16;
  Eigen::Index branch_knots = 6;
  Eigen::Index visual_dim = 20;    // pooled visual feature width
  Eigen::Index vocab_size = 16;    // transcript one-hot width
};

/// Width of the conclusion one-hot stack (scene, gender, age, emotion).
inline Eigen::Index conclusion_onehot_dim() {
  Eigen::Index n = 0;
  for (LabelAxis axis : kAllAxes) n += static_cast<Eigen::Index>(axis_size(axis));
  return n;
}

inline Vector conclusion_onehot(const ConclusionConditions& c) {
  static const OneHotEmbedder embedder;
  return concat_blocks(encode_conclusion(c, embedder));
}

/// Affine trunk plus one additive branch per condition slot:
///
///   v[f] = a(tau) .* x[f] + b(tau) + sum_s  sum_k g_k(tau) M_{s,k} e_s[f]
///
/// where e_s is the slot embedding (pooled visual mean, conclusion one-hots,
/// aligned transcript token one-hot, pooled prompt mean) or the slot's learned
/// null vector when the slot is absent. Branches start at zero, so adding a
/// slot never changes the output until it is trained.
class ConditionalFlowField final : public VelocityModel {
 public:
  explicit ConditionalFlowField(ConditionalFlowShape shape) : shape_(shape), trunk_(shape.dim, shape.trunk_knots) {
    if (shape.branch_knots < 2) throw std::invalid_argument("ConditionalFlowField: branch_knots must be >= 2");
    embed_dims_ = {shape.visual_dim, conclusion_onehot_dim(), shape.vocab_size, shape.dim};
    Eigen::Index off = trunk_.num_params();
    for (std::size_t s = 0; s < kConditionSlots; ++s) {
      branch_offset_[s] = off;
      off += shape.branch_knots * shape.dim * embed_dims_[s];
      null_offset_[s] = off;
      off += embed_dims_[s];
    }
    theta_ = Vector::Zero(off);
    trainable_.fill(true);
    trunk_trainable_ = true;
  }

  const ConditionalFlowShape& shape() const { return shape_; }
  Eigen::Index num_params() const { return theta_.size(); }
  Eigen::Index embed_dim(ConditionSlot s) const { return embed_dims_[static_cast<std::size_t>(s)]; }

  /// Initializes the trunk as the straight-line transport for N(mean, 1) data
  /// (a = 0, b = mean); a convenient start for training.
  void init_trunk_offset(const Vector& mean) {
    if (mean.size() != shape_.dim) throw std::invalid_argument("init_trunk_offset: width mismatch");
    for (Eigen::Index k = 0; k < shape_.trunk_knots; ++k) {
      for (Eigen::Index d = 0; d < shape_.dim; ++d) {
        theta_[shape_.trunk_knots * shape_.dim + d * shape_.trunk_knots + k] = mean[d];
      }
    }
  }

  /// Freezes or unfreezes parameter groups. Frozen groups receive no gradient.
  void set_trainable(bool trunk, std::array<bool, kConditionSlots> slots) {
    trunk_trainable_ = trunk;
    trainable_ = slots;
  }

  Vector parameters() const override { return theta_; }
  void set_parameters(const Vector& theta) override {
    if (theta.size() != theta_.size()) throw std::invalid_argument("ConditionalFlowField: parameter size mismatch");
    theta_ = theta;
  }

  /// Zeroes one slot's branch and null vector.
  void reset_slot(ConditionSlot s) {
    const auto i = static_cast<std::size_t>(s);
    theta_.segment(branch_offset_[i], null_offset_[i] + embed_dims_[i] - branch_offset_[i]).setZero();
  }

  Matrix evaluate(const Matrix& x, double tau, const DubbingConditions& c) const override {
    if (x.cols() != shape_.dim) throw std::invalid_argument("ConditionalFlowField: input width mismatch");
    AffineFlowField trunk = trunk_view();
    Matrix v = trunk.evaluate(x, tau, c);
    const Vector g = hat_basis(tau, shape_.branch_knots);
    Vector pooled = Vector::Zero(shape_.dim);
    for (auto s : {ConditionSlot::visual, ConditionSlot::conclusion, ConditionSlot::prompt}) {
      pooled += mixed_branch(s, g) * slot_embedding(s, c);
    }
    v.rowwise() += pooled.transpose();
    const Matrix wt = mixed_branch(ConditionSlot::transcript, g);
    if (c.transcript) {
      const auto& toks = c.transcript->tokens;
      for (Eigen::Index f = 0; f < x.rows(); ++f) {
        const int tok = toks[aligned_token(f, x.rows(), toks.size())];
        check_token(tok);
        v.row(f) += wt.col(tok).transpose();
      }
    } else {
      v.rowwise() += (wt * null_vector(ConditionSlot::transcript)).transpose();
    }
    return v;
  }

  void accumulate_gradient(const Matrix& x, double tau, const DubbingConditions& c, const Matrix& upstream,
                           Eigen::Ref<Vector> grad) const override {
    if (grad.size() != theta_.size()) throw std::invalid_argument("ConditionalFlowField: gradient size mismatch");
    if (trunk_trainable_) {
      trunk_view().accumulate_gradient(x, tau, c, upstream, grad.head(trunk_.num_params()));
    }
    const Vector g = hat_basis(tau, shape_.branch_knots);
    const Vector gsum = upstream.colwise().sum().transpose();
    for (auto s : {ConditionSlot::visual, ConditionSlot::conclusion, ConditionSlot::prompt}) {
      const auto i = static_cast<std::size_t>(s);
      if (!trainable_[i]) continue;
      const Vector e = slot_embedding(s, c);
      for (Eigen::Index k = 0; k < shape_.branch_knots; ++k) {
        if (g[k] == 0.0) continue;
        branch_grad(grad, s, k).noalias() += g[k] * gsum * e.transpose();
      }
      if (slot_is_null(s, c)) grad.segment(null_offset_[i], embed_dims_[i]) += mixed_branch(s, g).transpose() * gsum;
    }
    const auto it = static_cast<std::size_t>(ConditionSlot::transcript);
    if (trainable_[it]) {
      if (c.transcript) {
        const auto& toks = c.transcript->tokens;
        Matrix per_token = Matrix::Zero(shape_.dim, shape_.vocab_size);
        for (Eigen::Index f = 0; f < x.rows(); ++f) {
          per_token.col(toks[aligned_token(f, x.rows(), toks.size())]) += upstream.row(f).transpose();
        }
        for (Eigen::Index k = 0; k < shape_.branch_knots; ++k) {
          if (g[k] != 0.0) branch_grad(grad, ConditionSlot::transcript, k) += g[k] * per_token;
        }
      } else {
        const Vector n = null_vector(ConditionSlot::transcript);
        for (Eigen::Index k = 0; k < shape_.branch_knots; ++k) {
          if (g[k] != 0.0) branch_grad(grad, ConditionSlot::transcript, k).noalias() += g[k] * gsum * n.transpose();
        }
        grad.segment(null_offset_[it], embed_dims_[it]) +=
            mixed_branch(ConditionSlot::transcript, g).transpose() * gsum;
      }
    }
  }

 private:
  AffineFlowField trunk_view() const {
    AffineFlowField t(shape_.dim, shape_.trunk_knots);
    t.set_parameters(theta_.head(t.num_params()));
    return t;
  }

  void check_token(int tok) const {
    if (tok < 0 || tok >= shape_.vocab_size) throw std::invalid_argument("ConditionalFlowField: token id out of range");
  }

  static bool slot_is_null(ConditionSlot s, const DubbingConditions& c) {
    switch (s) {
      case ConditionSlot::visual: return !c.visual;
      case ConditionSlot::conclusion: return !c.conclusion;
      case ConditionSlot::transcript: return !c.transcript;
      case ConditionSlot::prompt: return !c.prompt;
    }
    return true;
  }

  Vector null_vector(ConditionSlot s) const {
    const auto i = static_cast<std::size_t>(s);
    return theta_.segment(null_offset_[i], embed_dims_[i]);
  }

  Vector slot_embedding(ConditionSlot s, const DubbingConditions& c) const {
    if (slot_is_null(s, c)) return null_vector(s);
    switch (s) {
      case ConditionSlot::visual: {
        if (c.visual->frames.cols() != shape_.visual_dim) {
          throw std::invalid_argument("ConditionalFlowField: visual width mismatch");
        }
        return c.visual->frames.colwise().mean().transpose();
      }
      case ConditionSlot::conclusion: return conclusion_onehot(*c.conclusion);
      case ConditionSlot::prompt: {
        if (c.prompt->features.frames.cols() != shape_.dim) {
          throw std::invalid_argument("ConditionalFlowField: prompt width mismatch");
        }
        return c.prompt->features.frames.colwise().mean().transpose();
      }
      case ConditionSlot::transcript: break;
    }
    throw std::logic_error("slot_embedding: transcript is per-frame");
  }

  Eigen::Map<const Matrix> branch(ConditionSlot s, Eigen::Index k) const {
    const auto i = static_cast<std::size_t>(s);
    const Eigen::Index block = shape_.dim * embed_dims_[i];
    return {theta_.data() + branch_offset_[i] + k * block, shape_.dim, embed_dims_[i]};
  }

  Eigen::Map<Matrix> branch_grad(Eigen::Ref<Vector>& grad, ConditionSlot s, Eigen::Index k) const {
    const auto i = static_cast<std::size_t>(s);
    const Eigen::Index block = shape_.dim * embed_dims_[i];
    return {grad.data() + branch_offset_[i] + k * block, shape_.dim, embed_dims_[i]};
  }

  /// sum_k g_k M_{s,k}
  Matrix mixed_branch(ConditionSlot s, const Vector& g) const {
    Matrix m = Matrix::Zero(shape_.dim, embed_dims_[static_cast<std::size_t>(s)]);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      if (g[k] != 0.0) m += g[k] * branch(s, k);
    }
    return m;
  }

  ConditionalFlowShape shape_;
  AffineFlowField trunk_;  // shape holder; live values are in theta_
  std::array<Eigen::Index, kConditionSlots> embed_dims_{};
  std::array<Eigen::Index, kConditionSlots> branch_offset_{};
  std::array<Eigen::Index, kConditionSlots> null_offset_{};
  std::array<bool, kConditionSlots> trainable_{};
  bool trunk_trainable_ = true;
  Vector theta_;
};

// ---------------------------------------------------------------------------

/// log(seconds) = w . [log clip_seconds, conclusion one-hots (zeros if null), 1]
class LogLinearDurationPredictor final : public DurationModel {
 public:
  LogLinearDurationPredictor() : w_(Vector::Zero(conclusion_onehot_dim() + 2)) { w_[0] = 1.0; }

  Vector features(const VisualFeatureSeq& visual, const Nullable<ConclusionConditions>& c) const {
    visual.validate();
    Vector phi = Vector::Zero(w_.size());
    phi[0] = std::log(visual.duration());
    if (c) phi.segment(1, conclusion_onehot_dim()) = conclusion_onehot(*c);
    phi[w_.size() - 1] = 1.0;
    return phi;
  }

  double predict_seconds(const VisualFeatureSeq& visual, const Nullable<ConclusionConditions>& c) const override {
    return std::exp(w_.dot(features(visual, c)));
  }

  Vector parameters() const override { return w_; }
  void set_parameters(const Vector& theta) override {
    if (theta.size() != w_.size()) throw std::invalid_argument("LogLinearDurationPredictor: parameter size mismatch");
    w_ = theta;
  }

  void accumulate_gradient(const VisualFeatureSeq& visual, const Nullable<ConclusionConditions>& c, double d_pred,
                           Eigen::Ref<Vector> grad) const override {
    const Vector phi = features(visual, c);
    grad += d_pred * std::exp(w_.dot(phi)) * phi;
  }

 private:
  Vector w_;
};

// ---------------------------------------------------------------------------

/// Adam with bias correction.
struct Adam {
  Adam() = default;
  explicit Adam(double learning_rate) : lr(learning_rate) {}

  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m;
  Vector v;
  long t = 0;

  void step(Vector& theta, const Vector& grad) {
    if (m.size() != theta.size()) {
      m = Vector::Zero(theta.size());
      v = Vector::Zero(theta.size());
      t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace cotdub
