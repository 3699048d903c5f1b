#pragma once

// Pluggable policy interface for the preference objective, a small
// differentiable categorical policy, and the SFT / MPO update steps.
//
// A response is a short token tuple: a format token (0 = well-formed, k = the
// k-th mutation kind) followed by the four conclusion labels. Its text is the
// rendered trace, corrupted by the chosen mutation when the format token says
// so. The response log-probability is the sum of the five head log-probs.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotdub/cot_trace.hpp"
#include "cotdub/labels.hpp"
#include "cotdub/mutation.hpp"
#include "cotdub/preference.hpp"
#include "cotdub/reward.hpp"

namespace cotdub {

/// What the reasoning steps read off the clip: people on screen, and whether
/// anyone visible is talking.
struct SceneObservation {
  int people = 0;
  bool talking = false;
};

struct PolicyPrompt {
  Eigen::VectorXd features;
  SceneObservation observation;
};

inline constexpr std::size_t kFormatChoices = 1 + kAllMutations.size();
inline constexpr std::size_t kPolicyHeads = 5;  // format, scene, gender, age, emotion
inline constexpr int kResponseLength = static_cast<int>(kPolicyHeads);

struct PolicyResponse {
  std::size_t format = 0;  // 0 = well-formed
  Conclusion answer;

  friend bool operator==(const PolicyResponse&, const PolicyResponse&) = default;
};

inline std::size_t head_size(std::size_t head) {
  return head == 0 ? kFormatChoices : axis_size(kAllAxes[head - 1]);
}

inline std::size_t response_token(const PolicyResponse& r, std::size_t head) {
  return head == 0 ? r.format : r.answer.index(kAllAxes[head - 1]);
}

// ---------------------------------------------------------------------------
// Trace composition

inline CoTTrace compose_trace(const SceneObservation& obs, const Conclusion& answer) {
  CoTTrace t;
  const std::string people = obs.people == 1 ? "1 person" : std::to_string(obs.people) + " people";
  t.summary = "The clip shows " + people + " on screen and asks who is speaking and how.";
  t.caption = "The voice belongs to a " + std::string(to_string(answer.attributes.age)) + " " +
              std::string(to_string(answer.attributes.gender)) + " speaker who sounds " +
              std::string(to_string(answer.attributes.emotion)) + ".";
  t.reasoning_steps = {
      {1, "There " + std::string(obs.people == 1 ? "is " : "are ") + people + " in the video."},
      {2, obs.talking ? "The people on screen are talking." : "Nobody on screen is talking."},
      {3, "The clip contains " + std::string(to_string(answer.scene)) + "."},
      {4, "The answer is " + std::string(to_string(answer.scene)) + "."},
  };
  t.conclusion = answer;
  return t;
}

/// Target of each mutation kind when a policy emits it.
inline constexpr std::array<std::size_t, 5> kPolicyMutationChoice{5, 0, 1, 2, 0};

inline std::string response_text(const SceneObservation& obs, const PolicyResponse& r) {
  const std::string text = render_trace(compose_trace(obs, r.answer));
  if (r.format == 0) return text;
  if (r.format >= kFormatChoices) throw std::out_of_range("response_text: bad format token");
  return apply_mutation(text, kAllMutations[r.format - 1], kPolicyMutationChoice[r.format - 1]);
}

// ---------------------------------------------------------------------------
// Policy interface

struct ResponseEval {
  double log_prob = 0.0;
  double p_format = 0.5;   // model's probability of this response's format token
  double p_outcome = 0.5;  // model's probability of this response's scene token
};

class PolicyEvaluator {
 public:
  virtual ~PolicyEvaluator() = default;

  virtual ResponseEval evaluate(const PolicyPrompt& prompt, const PolicyResponse& response) const = 0;
  virtual int response_length(const PolicyResponse&) const { return kResponseLength; }

  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& theta) = 0;

  /// grad += d/dtheta [ d_log_prob * log_prob + d_p_format * p_format + d_p_outcome * p_outcome ].
  virtual void accumulate_gradient(const PolicyPrompt& prompt, const PolicyResponse& response, double d_log_prob,
                                   double d_p_format, double d_p_outcome, Eigen::Ref<Eigen::VectorXd> grad) const = 0;
};

/// Five independent softmax-linear heads over [features; 1].
class ToyPolicy final : public PolicyEvaluator {
 public:
  explicit ToyPolicy(Eigen::Index input_dim) : input_dim_(input_dim) {
    if (input_dim < 1) throw std::invalid_argument("ToyPolicy: input_dim must be >= 1");
    Eigen::Index offset = 0;
    for (std::size_t h = 0; h < kPolicyHeads; ++h) {
      offsets_[h] = offset;
      offset += static_cast<Eigen::Index>(head_size(h)) * (input_dim_ + 1);
    }
    theta_ = Eigen::VectorXd::Zero(offset);
  }

  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index num_params() const { return theta_.size(); }

  Eigen::VectorXd parameters() const override { return theta_; }
  void set_parameters(const Eigen::VectorXd& theta) override {
    if (theta.size() != theta_.size()) throw std::invalid_argument("ToyPolicy: parameter size mismatch");
    theta_ = theta;
  }

  Eigen::VectorXd head_probs(const PolicyPrompt& prompt, std::size_t head) const {
    const auto x = augmented(prompt);
    const Eigen::VectorXd logits = weights(head) * x;
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp().matrix();
    return p / p.sum();
  }

  ResponseEval evaluate(const PolicyPrompt& prompt, const PolicyResponse& r) const override {
    ResponseEval out;
    for (std::size_t h = 0; h < kPolicyHeads; ++h) {
      const Eigen::VectorXd p = head_probs(prompt, h);
      const double ph = p[static_cast<Eigen::Index>(response_token(r, h))];
      out.log_prob += std::log(ph);
      if (h == 0) out.p_format = ph;
      if (h == 1) out.p_outcome = ph;
    }
    return out;
  }

  void accumulate_gradient(const PolicyPrompt& prompt, const PolicyResponse& r, double d_log_prob, double d_p_format,
                           double d_p_outcome, Eigen::Ref<Eigen::VectorXd> grad) const override {
    if (grad.size() != theta_.size()) throw std::invalid_argument("ToyPolicy: gradient size mismatch");
    const auto x = augmented(prompt);
    for (std::size_t h = 0; h < kPolicyHeads; ++h) {
      const Eigen::VectorXd p = head_probs(prompt, h);
      const auto k = static_cast<Eigen::Index>(response_token(r, h));
      // d log p_k / d logits = e_k - p ;  d p_k / d logits = p_k (e_k - p)
      Eigen::VectorXd e_minus_p = -p;
      e_minus_p[k] += 1.0;
      double coeff = d_log_prob;
      if (h == 0) coeff += d_p_format * p[k];
      if (h == 1) coeff += d_p_outcome * p[k];
      if (coeff == 0.0) continue;
      const Eigen::Index rows = static_cast<Eigen::Index>(head_size(h));
      Eigen::Map<Eigen::MatrixXd> g(grad.data() + offsets_[h], rows, input_dim_ + 1);
      g.noalias() += coeff * e_minus_p * x.transpose();
    }
  }

  PolicyResponse greedy(const PolicyPrompt& prompt) const {
    PolicyResponse r;
    for (std::size_t h = 0; h < kPolicyHeads; ++h) {
      Eigen::Index best = 0;
      head_probs(prompt, h).maxCoeff(&best);
      set_token(r, h, static_cast<std::size_t>(best));
    }
    return r;
  }

  /// Inverse-CDF sampling with one uniform draw per head.
  PolicyResponse sample(const PolicyPrompt& prompt, std::span<const double, kPolicyHeads> uniforms) const {
    PolicyResponse r;
    for (std::size_t h = 0; h < kPolicyHeads; ++h) {
      const Eigen::VectorXd p = head_probs(prompt, h);
      std::size_t k = 0;
      double acc = p[0];
      while (uniforms[h] >= acc && k + 1 < static_cast<std::size_t>(p.size())) {
        ++k;
        acc += p[static_cast<Eigen::Index>(k)];
      }
      set_token(r, h, k);
    }
    return r;
  }

 private:
  static void set_token(PolicyResponse& r, std::size_t head, std::size_t value) {
    if (head == 0) {
      r.format = value;
    } else {
      r.answer.set(kAllAxes[head - 1], value);
    }
  }

  Eigen::VectorXd augmented(const PolicyPrompt& prompt) const {
    if (prompt.features.size() != input_dim_) throw std::invalid_argument("ToyPolicy: feature size mismatch");
    Eigen::VectorXd x(input_dim_ + 1);
    x << prompt.features, 1.0;
    return x;
  }

  Eigen::Map<const Eigen::MatrixXd> weights(std::size_t head) const {
    return {theta_.data() + offsets_[head], static_cast<Eigen::Index>(head_size(head)), input_dim_ + 1};
  }

  Eigen::Index input_dim_;
  std::array<Eigen::Index, kPolicyHeads> offsets_{};
  Eigen::VectorXd theta_;
};

// ---------------------------------------------------------------------------
// Training steps

struct PreferenceSample {
  PolicyPrompt prompt;
  PolicyResponse chosen;
  PolicyResponse rejected;
  Conclusion gold;
};

struct PreferenceItem {
  PreferenceSample sample;
  RewardFlags chosen_flags;
  RewardFlags rejected_flags;
};

/// Scores both responses of a sample through the rule-based reward.
inline PreferenceItem make_preference_item(PreferenceSample s) {
  PreferenceItem item;
  item.chosen_flags = score_trace(response_text(s.prompt.observation, s.chosen), s.gold);
  item.rejected_flags = score_trace(response_text(s.prompt.observation, s.rejected), s.gold);
  item.sample = std::move(s);
  return item;
}

struct MPOStepResult {
  double total = 0.0;
  MPOComponents components;  // batch means
  RewardProbs mean_chosen_probs;
  Eigen::VectorXd update;  // parameter delta applied by the step
};

namespace detail {

inline PolicyLogProbs gather_logprobs(const ResponseEval& tc, const ResponseEval& rc, const ResponseEval& tr,
                                      const ResponseEval& rr, int len_c, int len_r, bool normalize) {
  PolicyLogProbs lp{tc.log_prob, rc.log_prob, tr.log_prob, rr.log_prob, len_c};
  if (normalize) {
    lp.lp_theta_c /= len_c;
    lp.lp_ref_c /= len_c;
    lp.lp_theta_r /= len_r;
    lp.lp_ref_r /= len_r;
  }
  return lp;
}

}  // namespace detail

/// One gradient-descent step on the batch-mean mixed objective. The outcome
/// term is averaged over parseable responses only; unparseable responses have
/// no observable answer.
inline MPOStepResult mpo_step(PolicyEvaluator& policy, const PolicyEvaluator& reference,
                              std::span<const PreferenceItem> batch, const DPOConfig& cfg, const MPOWeights& w,
                              double learning_rate) {
  if (batch.empty()) throw std::invalid_argument("mpo_step: empty batch");
  cfg.validate();
  w.validate();
  const Eigen::VectorXd theta = policy.parameters();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  MPOStepResult out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const auto& item : batch) {
    const auto& s = item.sample;
    const ResponseEval tc = policy.evaluate(s.prompt, s.chosen);
    const ResponseEval tr = policy.evaluate(s.prompt, s.rejected);
    const ResponseEval rc = reference.evaluate(s.prompt, s.chosen);
    const ResponseEval rr = reference.evaluate(s.prompt, s.rejected);
    const int len_c = policy.response_length(s.chosen);
    const int len_r = policy.response_length(s.rejected);
    const PolicyLogProbs lp = detail::gather_logprobs(tc, rc, tr, rr, len_c, len_r, cfg.length_normalize);
    const double scale_c = cfg.length_normalize ? 1.0 / len_c : 1.0;
    const double scale_r = cfg.length_normalize ? 1.0 / len_r : 1.0;

    const double L_p = dpo_loss(lp, cfg.beta);
    const BCOLoss L_q = bco_loss(lp, cfg.beta, cfg.delta);
    const double L_g = gen_loss(tc.log_prob, len_c);

    const double L_f = 0.5 * (format_loss(tc.p_format, item.chosen_flags.f_true) +
                              format_loss(tr.p_format, item.rejected_flags.f_true));
    double L_c = 0.0;
    double n_parse = (item.chosen_flags.f_true ? 1.0 : 0.0) + (item.rejected_flags.f_true ? 1.0 : 0.0);
    if (item.chosen_flags.f_true) L_c += outcome_loss(tc.p_outcome, item.chosen_flags.o_true);
    if (item.rejected_flags.f_true) L_c += outcome_loss(tr.p_outcome, item.rejected_flags.o_true);
    if (n_parse > 0.0) L_c /= n_parse;

    out.components.L_p += inv_n * L_p;
    out.components.L_q += inv_n * L_q.total;
    out.components.L_g += inv_n * L_g;
    out.components.L_f += inv_n * L_f;
    out.components.L_c += inv_n * L_c;
    out.mean_chosen_probs.p_f += inv_n * tc.p_format;
    out.mean_chosen_probs.p_o += inv_n * tc.p_outcome;

    if (w.all_zero()) continue;
    const LogProbGrad gp = dpo_loss_grad(lp, cfg.beta);
    const LogProbGrad gq = bco_loss_grad(lp, cfg.beta, cfg.delta);
    double d_lp_c = w.w_p * gp.d_theta_c * scale_c + w.w_q * gq.d_theta_c * scale_c + w.w_g * gen_loss_grad(len_c);
    double d_lp_r = w.w_p * gp.d_theta_r * scale_r + w.w_q * gq.d_theta_r * scale_r;
    double d_pf_c = w.w_f * 0.5 * format_loss_grad(tc.p_format, item.chosen_flags.f_true);
    double d_pf_r = w.w_f * 0.5 * format_loss_grad(tr.p_format, item.rejected_flags.f_true);
    double d_po_c = 0.0;
    double d_po_r = 0.0;
    if (n_parse > 0.0) {
      if (item.chosen_flags.f_true) d_po_c = w.w_c / n_parse * outcome_loss_grad(tc.p_outcome, item.chosen_flags.o_true);
      if (item.rejected_flags.f_true) {
        d_po_r = w.w_c / n_parse * outcome_loss_grad(tr.p_outcome, item.rejected_flags.o_true);
      }
    }
    policy.accumulate_gradient(s.prompt, s.chosen, inv_n * d_lp_c, inv_n * d_pf_c, inv_n * d_po_c, grad);
    policy.accumulate_gradient(s.prompt, s.rejected, inv_n * d_lp_r, inv_n * d_pf_r, inv_n * d_po_r, grad);
  }
  out.total = mpo_total(w, out.components);
  out.update = -learning_rate * grad;
  policy.set_parameters(theta + out.update);
  return out;
}

struct SFTExample {
  PolicyPrompt prompt;
  PolicyResponse target;
};

/// One gradient-descent step on the batch-mean per-token NLL of the targets.
/// Returns the mean loss before the step.
inline double sft_step(PolicyEvaluator& policy, std::span<const SFTExample> batch, double learning_rate) {
  if (batch.empty()) throw std::invalid_argument("sft_step: empty batch");
  const Eigen::VectorXd theta = policy.parameters();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    const int len = policy.response_length(ex.target);
    loss += inv_n * gen_loss(policy.evaluate(ex.prompt, ex.target).log_prob, len);
    policy.accumulate_gradient(ex.prompt, ex.target, inv_n * gen_loss_grad(len), 0.0, 0.0, grad);
  }
  policy.set_parameters(theta - learning_rate * grad);
  return loss;
}

}  // namespace cotdub
