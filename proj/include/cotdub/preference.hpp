#pragma once

// Mixed preference objective: DPO preference loss, BCO quality loss, per-token
// generation loss and the weighted total with format/outcome terms.
//
// All losses are scalar functions of sequence log-probabilities; each comes
// with its analytic partial derivatives so that a policy can chain them into
// parameter gradients.

#include <cmath>
#include <stdexcept>
#include <string>

namespace cotdub {

/// Sequence log-probabilities of a chosen (c) and rejected (r) response under
/// the trained policy (theta) and the frozen reference (ref).
struct PolicyLogProbs {
  double lp_theta_c = 0.0;
  double lp_ref_c = 0.0;
  double lp_theta_r = 0.0;
  double lp_ref_r = 0.0;
  int len_c = 1;
};

struct MPOWeights {
  double w_p = 1.0;
  double w_q = 1.0;
  double w_g = 1.0;
  double w_f = 1.0;
  double w_c = 1.0;

  void validate() const {
    for (double w : {w_p, w_q, w_g, w_f, w_c}) {
      if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("MPO weights must be finite and non-negative");
    }
  }

  bool all_zero() const { return w_p == 0.0 && w_q == 0.0 && w_g == 0.0 && w_f == 0.0 && w_c == 0.0; }
};

struct DPOConfig {
  double beta = 0.1;
  double delta = 0.0;
  // Divide sequence log-probs by response length before forming log-ratios.
  bool length_normalize = false;

  void validate() const {
    if (!std::isfinite(beta) || beta <= 0.0) throw std::invalid_argument("DPO beta must be > 0");
    if (!std::isfinite(delta)) throw std::invalid_argument("BCO delta must be finite");
  }
};

/// Partial derivatives of a loss with respect to the four log-probabilities.
struct LogProbGrad {
  double d_theta_c = 0.0;
  double d_ref_c = 0.0;
  double d_theta_r = 0.0;
  double d_ref_r = 0.0;
};

namespace detail {

inline void require_finite(const PolicyLogProbs& lp) {
  if (!std::isfinite(lp.lp_theta_c) || !std::isfinite(lp.lp_ref_c) || !std::isfinite(lp.lp_theta_r) ||
      !std::isfinite(lp.lp_ref_r)) {
    throw std::invalid_argument("log-probabilities must be finite");
  }
}

inline void require_beta(double beta) {
  if (!std::isfinite(beta) || beta <= 0.0) throw std::invalid_argument("beta must be > 0");
}

}  // namespace detail

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// -log sigmoid(z), evaluated without overflow.
inline double neg_log_sigmoid(double z) {
  if (z > 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

inline double dpo_loss(const PolicyLogProbs& lp, double beta) {
  detail::require_finite(lp);
  detail::require_beta(beta);
  const double z = beta * (lp.lp_theta_c - lp.lp_ref_c) - beta * (lp.lp_theta_r - lp.lp_ref_r);
  return neg_log_sigmoid(z);
}

inline LogProbGrad dpo_loss_grad(const PolicyLogProbs& lp, double beta) {
  detail::require_finite(lp);
  detail::require_beta(beta);
  const double z = beta * (lp.lp_theta_c - lp.lp_ref_c) - beta * (lp.lp_theta_r - lp.lp_ref_r);
  const double s = beta * sigmoid(-z);
  return {-s, s, s, -s};
}

struct BCOLoss {
  double plus = 0.0;   // chosen term
  double minus = 0.0;  // rejected term
  double total = 0.0;
};

inline BCOLoss bco_loss(const PolicyLogProbs& lp, double beta, double delta) {
  detail::require_finite(lp);
  detail::require_beta(beta);
  if (!std::isfinite(delta)) throw std::invalid_argument("delta must be finite");
  const double zc = beta * (lp.lp_theta_c - lp.lp_ref_c) - delta;
  const double zr = beta * (lp.lp_theta_r - lp.lp_ref_r) - delta;
  BCOLoss out;
  out.plus = neg_log_sigmoid(zc);
  out.minus = neg_log_sigmoid(-zr);
  out.total = out.plus + out.minus;
  return out;
}

/// Gradient of the total BCO loss.
inline LogProbGrad bco_loss_grad(const PolicyLogProbs& lp, double beta, double delta) {
  detail::require_finite(lp);
  detail::require_beta(beta);
  const double zc = beta * (lp.lp_theta_c - lp.lp_ref_c) - delta;
  const double zr = beta * (lp.lp_theta_r - lp.lp_ref_r) - delta;
  const double gc = -beta * sigmoid(-zc);
  const double gr = beta * sigmoid(zr);
  return {gc, -gc, gr, -gr};
}

/// Mean negative log-likelihood per token of the chosen response.
inline double gen_loss(double lp_theta_c, int len_c) {
  if (len_c < 1) throw std::invalid_argument("gen_loss: response length must be >= 1");
  if (!std::isfinite(lp_theta_c)) throw std::invalid_argument("gen_loss: log-probability must be finite");
  return -lp_theta_c / static_cast<double>(len_c);
}

inline double gen_loss_grad(int len_c) {
  if (len_c < 1) throw std::invalid_argument("gen_loss: response length must be >= 1");
  return -1.0 / static_cast<double>(len_c);
}

struct MPOComponents {
  double L_p = 0.0;
  double L_q = 0.0;
  double L_g = 0.0;
  double L_f = 0.0;
  double L_c = 0.0;
};

inline double mpo_total(const MPOWeights& w, const MPOComponents& c) {
  w.validate();
  for (double v : {c.L_p, c.L_q, c.L_g, c.L_f, c.L_c}) {
    if (!std::isfinite(v)) throw std::invalid_argument("mpo_total: component losses must be finite");
  }
  return w.w_p * c.L_p + w.w_q * c.L_q + w.w_g * c.L_g + w.w_f * c.L_f + w.w_c * c.L_c;
}

inline double mpo_total(const MPOWeights& w, double L_p, double L_q, double L_g, double L_f, double L_c) {
  return mpo_total(w, MPOComponents{L_p, L_q, L_g, L_f, L_c});
}

}  // namespace cotdub
