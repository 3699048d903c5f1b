#pragma once

// Multi-condition classifier-free guidance and the ODE sampler.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "cotdub/conditions.hpp"
#include "cotdub/flow_matching.hpp"

namespace cotdub {

struct GuidanceScales {
  double lambda_V = 2.0;
  double lambda_C = 2.0;
  double lambda_T = 2.0;

  void validate() const {
    if (!std::isfinite(lambda_V) || !std::isfinite(lambda_C) || !std::isfinite(lambda_T)) {
      throw std::invalid_argument("guidance scales must be finite");
    }
  }
  bool has_negative() const { return lambda_V < 0.0 || lambda_C < 0.0 || lambda_T < 0.0; }
};

enum class OdeScheme { euler, midpoint };

struct SamplerConfig {
  int steps = 32;
  OdeScheme scheme = OdeScheme::euler;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be >= 1");
  }
};

/// Condition patterns evaluated by the guidance rule, from most to least
/// conditioned: (v, c, t), (-, c, t), (-, -, t), (-, -, -).
struct GuidanceBranches {
  Matrix full;
  Matrix no_visual;
  Matrix transcript_only;
  Matrix unconditional;
};

inline GuidanceBranches guidance_branches(const VelocityModel& model, const Matrix& x, double tau,
                                          const DubbingConditions& c) {
  DubbingConditions ct = c;
  ct.visual = kNull;
  DubbingConditions t = ct;
  t.conclusion = kNull;
  DubbingConditions none = t;
  none.transcript = kNull;
  return {checked_velocity(model, x, tau, c), checked_velocity(model, x, tau, ct), checked_velocity(model, x, tau, t),
          checked_velocity(model, x, tau, none)};
}

/// v(-,-,-) + lV [v(v,c,t) - v(-,c,t)] + lC [v(-,c,t) - v(-,-,t)] + lT [v(-,-,t) - v(-,-,-)]
///
/// Evaluated in the regrouped form
///   lV v(v,c,t) + (lC - lV) v(-,c,t) + (lT - lC) v(-,-,t) + (1 - lT) v(-,-,-)
/// so that unit scales return v(v,c,t) and zero scales return v(-,-,-) bit for bit.
inline Matrix combine_guidance(const GuidanceBranches& b, const GuidanceScales& s) {
  s.validate();
  return s.lambda_V * b.full + (s.lambda_C - s.lambda_V) * b.no_visual + (s.lambda_T - s.lambda_C) * b.transcript_only +
         (1.0 - s.lambda_T) * b.unconditional;
}

inline Matrix guided_velocity(const VelocityModel& model, const Matrix& x, double tau, const DubbingConditions& c,
                              const GuidanceScales& s) {
  return combine_guidance(guidance_branches(model, x, tau, c), s);
}

/// Integrates dx/dtau = guided velocity from tau = 0 (x ~ N(0, I), seeded) to
/// tau = 1 with uniform steps.
inline FeatureSeq integrate(const VelocityModel& model, const DubbingConditions& c, Eigen::Index target_frames,
                            Eigen::Index dim, const GuidanceScales& s, const SamplerConfig& cfg,
                            double frame_hop = 0.01) {
  if (target_frames < 1) throw std::invalid_argument("integrate: target_frames must be >= 1");
  if (dim < 1) throw std::invalid_argument("integrate: dim must be >= 1");
  cfg.validate();
  s.validate();
  std::mt19937_64 rng(cfg.seed);
  Matrix x = detail::standard_normal(target_frames, dim, rng);
  const double h = 1.0 / static_cast<double>(cfg.steps);
  for (int i = 0; i < cfg.steps; ++i) {
    const double tau = static_cast<double>(i) * h;
    if (cfg.scheme == OdeScheme::euler) {
      x += h * guided_velocity(model, x, tau, c, s);
    } else {
      const Matrix mid = x + 0.5 * h * guided_velocity(model, x, tau, c, s);
      x += h * guided_velocity(model, mid, tau + 0.5 * h, c, s);
    }
    if (!x.allFinite()) throw std::runtime_error("integrate: non-finite state at step " + std::to_string(i));
  }
  return FeatureSeq(std::move(x), frame_hop);
}

/// Frame count for a predicted duration: round(seconds / hop), at least 1.
inline Eigen::Index duration_to_frames(double seconds, double frame_hop) {
  if (!(frame_hop > 0.0)) throw std::invalid_argument("duration_to_frames: frame_hop must be > 0");
  if (!std::isfinite(seconds)) throw std::invalid_argument("duration_to_frames: duration must be finite");
  const double frames = std::round(seconds / frame_hop);
  return frames < 1.0 ? 1 : static_cast<Eigen::Index>(frames);
}

inline Eigen::Index predict_duration(const DurationModel& predictor, const VisualFeatureSeq& visual,
                                     const Nullable<ConclusionConditions>& conclusion, double frame_hop) {
  return duration_to_frames(predictor.predict_seconds(visual, conclusion), frame_hop);
}

}  // namespace cotdub
