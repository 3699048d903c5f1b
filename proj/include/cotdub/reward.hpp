#pragma once

// Rule-based rewards: format / outcome correctness flags read off a trace, and
// the binary cross-entropy losses that train the model's own estimates of them.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include "cotdub/cot_trace.hpp"

namespace cotdub {

inline constexpr double kProbEpsilon = 1e-7;

struct RewardFlags {
  bool f_true = false;
  bool o_true = false;
};

struct RewardProbs {
  double p_f = 0.5;
  double p_o = 0.5;
};

/// Per-axis attribute agreement. Reported alongside the outcome flag but never
/// folded into it.
struct AttributeFlags {
  bool gender = false;
  bool age = false;
  bool emotion = false;
};

inline double clamp_probability(double p) {
  if (!std::isfinite(p)) throw std::invalid_argument("probability must be finite");
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

/// Outcome is scene-type agreement only.
inline bool outcome_check(const Conclusion& pred, const Conclusion& gold) { return pred.scene == gold.scene; }

inline AttributeFlags attribute_check(const Conclusion& pred, const Conclusion& gold) {
  return {pred.attributes.gender == gold.attributes.gender, pred.attributes.age == gold.attributes.age,
          pred.attributes.emotion == gold.attributes.emotion};
}

/// -[y log p + (1 - y) log(1 - p)] with p clamped to [eps, 1 - eps].
inline double binary_cross_entropy(double p, bool y) {
  const double q = clamp_probability(p);
  return y ? -std::log(q) : -std::log1p(-q);
}

/// d/dp of binary_cross_entropy; zero outside the clamp interval.
inline double binary_cross_entropy_grad(double p, bool y) {
  if (!std::isfinite(p)) throw std::invalid_argument("probability must be finite");
  if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) return 0.0;
  return y ? -1.0 / p : 1.0 / (1.0 - p);
}

inline double format_loss(double p_f, bool f_true) { return binary_cross_entropy(p_f, f_true); }
inline double outcome_loss(double p_o, bool o_true) { return binary_cross_entropy(p_o, o_true); }
inline double format_loss_grad(double p_f, bool f_true) { return binary_cross_entropy_grad(p_f, f_true); }
inline double outcome_loss_grad(double p_o, bool o_true) { return binary_cross_entropy_grad(p_o, o_true); }

/// Flags for a raw model output against a gold answer. o_true is only granted
/// when the text parses.
inline RewardFlags score_trace(std::string_view text, const Conclusion& gold) {
  ParseResult r = parse_trace(text);
  if (const auto* trace = std::get_if<CoTTrace>(&r)) {
    return {true, outcome_check(extract_answer(*trace), gold)};
  }
  return {false, false};
}

}  // namespace cotdub
