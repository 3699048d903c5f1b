#pragma once

// Multi-condition bundle for speech generation. Every slot is nullable; an
// empty optional is the null condition, distinct from any empty sequence.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotdub/features.hpp"
#include "cotdub/labels.hpp"

namespace cotdub {

template <class T>
using Nullable = std::optional<T>;

inline constexpr std::nullopt_t kNull = std::nullopt;

struct VisualFeatureSeq {
  Matrix frames;  // T x Dv
  double fps = 25.0;

  double duration() const { return static_cast<double>(frames.rows()) / fps; }

  void validate() const {
    if (frames.rows() < 1 || frames.cols() < 1) throw std::invalid_argument("VisualFeatureSeq: needs T >= 1");
    if (!frames.allFinite()) throw std::invalid_argument("VisualFeatureSeq: entries must be finite");
    if (!(fps > 0.0)) throw std::invalid_argument("VisualFeatureSeq: fps must be > 0");
  }
};

/// Scene, gender, age and emotion sub-conditions.
struct ConclusionConditions {
  Conclusion labels;

  void validate() const {
    for (LabelAxis axis : kAllAxes) {
      if (labels.index(axis) >= axis_size(axis)) {
        throw std::invalid_argument(std::string("ConclusionConditions: ") + std::string(axis_key(axis)) +
                                    " label outside vocabulary");
      }
    }
  }
};

inline ConclusionConditions make_conclusion_conditions(std::string_view scene, std::string_view gender,
                                                       std::string_view age, std::string_view emotion) {
  ConclusionConditions c;
  c.labels.set(LabelAxis::scene, parse_label(LabelAxis::scene, scene));
  c.labels.set(LabelAxis::gender, parse_label(LabelAxis::gender, gender));
  c.labels.set(LabelAxis::age, parse_label(LabelAxis::age, age));
  c.labels.set(LabelAxis::emotion, parse_label(LabelAxis::emotion, emotion));
  return c;
}

struct TokenSeq {
  std::vector<int> tokens;
  std::string text;

  void validate() const {
    if (tokens.empty()) throw std::invalid_argument("TokenSeq: must be non-empty");
  }
};

struct SpeechPrompt {
  FeatureSeq features;
  TokenSeq transcript;

  void validate() const { features.validate(); }
};

struct DubbingConditions {
  Nullable<VisualFeatureSeq> visual;
  Nullable<ConclusionConditions> conclusion;
  Nullable<TokenSeq> transcript;
  std::optional<SpeechPrompt> prompt;  // never dropped

  bool fully_unconditional() const { return !visual && !conclusion && !transcript; }
};

inline DubbingConditions assemble_conditions(Nullable<VisualFeatureSeq> visual, Nullable<ConclusionConditions> conclusion,
                                             Nullable<TokenSeq> transcript,
                                             std::optional<SpeechPrompt> prompt = std::nullopt) {
  if (visual) visual->validate();
  if (conclusion) conclusion->validate();
  if (transcript) transcript->validate();
  if (prompt) prompt->validate();
  return {std::move(visual), std::move(conclusion), std::move(transcript), std::move(prompt)};
}

/// Independently replaces visual, conclusion and transcript by the null
/// condition with probability p each. Always consumes three draws.
template <class Rng>
DubbingConditions dropout_conditions(DubbingConditions c, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout_conditions: p must be in [0, 1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool drop_v = u(rng) < p;
  const bool drop_c = u(rng) < p;
  const bool drop_t = u(rng) < p;
  if (drop_v) c.visual = kNull;
  if (drop_c) c.conclusion = kNull;
  if (drop_t) c.transcript = kNull;
  return c;
}

// ---------------------------------------------------------------------------
// Label embedders

class LabelEmbedder {
 public:
  virtual ~LabelEmbedder() = default;
  virtual Eigen::Index dim(LabelAxis axis) const = 0;
  virtual Vector embed(LabelAxis axis, std::size_t label) const = 0;
};

class OneHotEmbedder final : public LabelEmbedder {
 public:
  Eigen::Index dim(LabelAxis axis) const override { return static_cast<Eigen::Index>(axis_size(axis)); }
  Vector embed(LabelAxis axis, std::size_t label) const override {
    if (label >= axis_size(axis)) throw std::invalid_argument("OneHotEmbedder: unknown label");
    Vector v = Vector::Zero(dim(axis));
    v[static_cast<Eigen::Index>(label)] = 1.0;
    return v;
  }
};

/// Fixed Gaussian random vectors per label, drawn once from a seed.
class RandomProjectionEmbedder final : public LabelEmbedder {
 public:
  RandomProjectionEmbedder(std::uint64_t seed, Eigen::Index dim) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("RandomProjectionEmbedder: dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (LabelAxis axis : kAllAxes) {
      Matrix table(static_cast<Eigen::Index>(axis_size(axis)), dim);
      for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = n(rng);
      tables_.push_back(std::move(table));
    }
  }

  Eigen::Index dim(LabelAxis) const override { return dim_; }
  Vector embed(LabelAxis axis, std::size_t label) const override {
    if (label >= axis_size(axis)) throw std::invalid_argument("RandomProjectionEmbedder: unknown label");
    return tables_[static_cast<std::size_t>(axis)].row(static_cast<Eigen::Index>(label)).transpose();
  }

 private:
  Eigen::Index dim_;
  std::vector<Matrix> tables_;
};

/// Per-label embeddings in (scene, gender, age, emotion) order.
inline std::vector<Vector> encode_conclusion(const ConclusionConditions& c, const LabelEmbedder& embedder) {
  c.validate();
  std::vector<Vector> blocks;
  blocks.reserve(kAllAxes.size());
  for (LabelAxis axis : kAllAxes) blocks.push_back(embedder.embed(axis, c.labels.index(axis)));
  return blocks;
}

inline Vector concat_blocks(const std::vector<Vector>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size();
  Vector out(n);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    out.segment(off, b.size()) = b;
    off += b.size();
  }
  return out;
}

/// Token aligned to frame f of an F-frame target under uniform alignment.
inline std::size_t aligned_token(Eigen::Index frame, Eigen::Index num_frames, std::size_t num_tokens) {
  return static_cast<std::size_t>((static_cast<std::size_t>(frame) * num_tokens) / static_cast<std::size_t>(num_frames));
}

}  // namespace cotdub
