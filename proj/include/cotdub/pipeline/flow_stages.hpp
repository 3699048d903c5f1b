#pragma once

// Stage 2: flow-matching pretraining of the speech generator on transcripts
// and prompts, then condition tuning of the zero-initialized visual and
// conclusion branches on the frozen trunk, jointly with the duration
// predictor.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "cotdub/flow_matching.hpp"
#include "cotdub/flow_models.hpp"
#include "cotdub/pipeline/config.hpp"
#include "cotdub/pipeline/io.hpp"
#include "cotdub/pipeline/policy_stages.hpp"
#include "cotdub/pipeline/world.hpp"

namespace cotdub::pipeline {

inline constexpr std::uint64_t kStreamCfm = 21;
inline constexpr std::uint64_t kStreamTune = 22;

inline ConditionalFlowShape flow_shape() {
  ConditionalFlowShape s;
  s.dim = kSpeechDim;
  s.visual_dim = kVisualDim;
  s.vocab_size = kVocabSize;
  return s;
}

inline ConditionalFlowField make_flow_model() { return ConditionalFlowField(flow_shape()); }

inline SpeechPrompt speech_prompt(const Item& it) { return SpeechPrompt{it.speech, it.transcript}; }

/// Another utterance by the same speaker, drawn from `pool`; nullptr when the
/// speaker has none.
template <class Rng>
const Item* other_utterance(const Item& it, const std::vector<const Item*>& pool, Rng& rng) {
  std::vector<const Item*> same;
  for (const Item* p : pool) {
    if (p->speaker == it.speaker && p->id != it.id) same.push_back(p);
  }
  if (same.empty()) return nullptr;
  return same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
}

/// With probability prompt_prob, a random contiguous 30-70% segment of the
/// target recording as voice prompt (in-context infilling).
template <class Rng>
std::optional<SpeechPrompt> training_prompt(const Item& it, double prompt_prob, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) >= prompt_prob) return std::nullopt;
  const Eigen::Index frames = it.speech.num_frames();
  const double frac = 0.3 + 0.4 * u01(rng);
  const Eigen::Index len = std::clamp<Eigen::Index>(std::lround(frac * static_cast<double>(frames)), 1, frames);
  const Eigen::Index start = std::uniform_int_distribution<Eigen::Index>(0, frames - len)(rng);
  return SpeechPrompt{FeatureSeq(it.speech.frames.middleRows(start, len), it.speech.frame_hop), it.transcript};
}

inline Vector mean_frame(const std::vector<const Item*>& pool) {
  Vector sum = Vector::Zero(kSpeechDim);
  double n = 0.0;
  for (const Item* it : pool) {
    sum += it->speech.frames.colwise().sum().transpose();
    n += static_cast<double>(it->speech.num_frames());
  }
  return sum / n;
}

struct CfmResult {
  ConditionalFlowField model = make_flow_model();
  std::vector<double> losses;
};

/// Transcript (with dropout) and prompt only; the visual and conclusion slots
/// stay null and frozen.
inline CfmResult train_cfm(const std::vector<Item>& items, const RunConfig& cfg) {
  const auto pool = select(items, Split::train);
  if (pool.empty()) throw std::runtime_error("train-cfm: no training items");
  auto rng = stream_rng(cfg.seed, kStreamCfm);
  CfmResult out;
  out.model.init_trunk_offset(mean_frame(pool));
  out.model.set_trainable(true, {false, false, true, true});
  Adam opt{cfg.cfm_lr};
  Vector theta = out.model.parameters();
  for (int step = 0; step < cfg.cfm_steps; ++step) {
    std::vector<FeatureSeq> targets;
    std::vector<DubbingConditions> conds;
    for (const Item* it : draw_batch(pool, cfg.cfm_batch, rng)) {
      DubbingConditions c = assemble_conditions(kNull, kNull, it->transcript,
                                                training_prompt(*it, cfg.prompt_prob, rng));
      c = dropout_conditions(std::move(c), cfg.dropout_p, rng);
      targets.push_back(it->speech);
      conds.push_back(std::move(c));
    }
    Vector grad = Vector::Zero(theta.size());
    out.losses.push_back(cfm_objective(out.model, std::span<const FeatureSeq>(targets),
                                       std::span<const DubbingConditions>(conds), rng, cfg.flow, &grad));
    opt.step(theta, grad);
    out.model.set_parameters(theta);
  }
  out.model.set_trainable(true, {true, true, true, true});
  return out;
}

struct TuneStep {
  double total = 0.0;
  double cfm = 0.0;
  double duration = 0.0;
};

struct TuneResult {
  ConditionalFlowField model = make_flow_model();
  LogLinearDurationPredictor duration;
  std::vector<TuneStep> curve;
};

/// Full conditions with independent per-slot dropout. Only the visual and
/// conclusion branches (and the duration predictor) are updated.
inline TuneResult train_tune(const std::vector<Item>& items, const ConditionalFlowField& pretrained,
                             const RunConfig& cfg) {
  const auto pool = select(items, Split::train);
  if (pool.empty()) throw std::runtime_error("train-tune: no training items");
  auto rng = stream_rng(cfg.seed, kStreamTune);
  TuneResult out;
  out.model = pretrained;
  out.model.set_trainable(false, {true, true, false, false});
  Adam opt{cfg.tune_lr};
  Adam dur_opt{cfg.dur_lr};
  Vector theta = out.model.parameters();
  Vector w = out.duration.parameters();
  for (int step = 0; step < cfg.tune_steps; ++step) {
    std::vector<Stage2Item> batch;
    for (const Item* it : draw_batch(pool, cfg.tune_batch, rng)) {
      const ConclusionConditions gold{it->gold};
      DubbingConditions c = assemble_conditions(it->visual, gold, it->transcript,
                                                training_prompt(*it, cfg.prompt_prob, rng));
      c = dropout_conditions(std::move(c), cfg.dropout_p, rng);
      batch.push_back(Stage2Item{it->speech, std::move(c), it->visual, gold, it->duration_s});
    }
    const Stage2Loss l = stage2_loss(out.model, out.duration, std::span<const Stage2Item>(batch), rng, cfg.flow, true);
    out.curve.push_back({l.total, l.cfm_part, l.dur_part});
    opt.step(theta, l.model_grad);
    dur_opt.step(w, l.duration_grad);
    out.model.set_parameters(theta);
    out.duration.set_parameters(w);
  }
  out.model.set_trainable(true, {true, true, true, true});
  return out;
}

struct DurationReport {
  double predictor_mae = 0.0;
  double baseline_mae = 0.0;
  int items = 0;
};

/// Mean absolute error in seconds on `eval`, against predicting the mean
/// training duration for every item.
inline DurationReport duration_report(const DurationModel& dur, const std::vector<const Item*>& train,
                                      const std::vector<const Item*>& eval) {
  double mean = 0.0;
  for (const Item* it : train) mean += it->duration_s;
  mean /= static_cast<double>(train.size());
  DurationReport r;
  for (const Item* it : eval) {
    const double pred = dur.predict_seconds(it->visual, ConclusionConditions{it->gold});
    r.predictor_mae += std::abs(pred - it->duration_s);
    r.baseline_mae += std::abs(mean - it->duration_s);
    ++r.items;
  }
  if (r.items) {
    r.predictor_mae /= r.items;
    r.baseline_mae /= r.items;
  }
  return r;
}

inline ConditionalFlowField load_flow_model(const fs::path& p) {
  ConditionalFlowField m = make_flow_model();
  m.set_parameters(load_parameters(p, "conditional_flow"));
  return m;
}

inline LogLinearDurationPredictor load_duration_model(const fs::path& p) {
  LogLinearDurationPredictor d;
  d.set_parameters(load_parameters(p, "log_linear_duration"));
  return d;
}

// ---------------------------------------------------------------------------
// Stage runners

inline CfmResult run_train_cfm(const RunConfig& cfg, const RunLayout& run) {
  const auto items = load_dataset(run.manifest());
  CfmResult r = train_cfm(items, cfg);
  const fs::path dir = run.stage("cfm");
  save_parameters(run.cfm_model(), "conditional_flow", r.model.parameters());
  Table curve{{"step", "cfm"}, {}};
  for (std::size_t i = 0; i < r.losses.size(); ++i) curve.add({std::to_string(i), fixed(r.losses[i], 6)});
  write_file(dir / "curve.tsv", curve.str());
  write_run_record(run, "cfm", cfg, {run.manifest()});
  return r;
}

inline TuneResult run_train_tune(const RunConfig& cfg, const RunLayout& run) {
  require_file(run.cfm_model(), "pretrained flow checkpoint");
  const auto items = load_dataset(run.manifest());
  TuneResult r = train_tune(items, load_flow_model(run.cfm_model()), cfg);
  const fs::path dir = run.stage("tune");
  save_parameters(run.tune_model(), "conditional_flow", r.model.parameters());
  save_parameters(run.tune_duration(), "log_linear_duration", r.duration.parameters());
  Table curve{{"step", "total", "cfm", "duration"}, {}};
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    curve.add({std::to_string(i), fixed(r.curve[i].total, 6), fixed(r.curve[i].cfm, 6), fixed(r.curve[i].duration, 6)});
  }
  write_file(dir / "curve.tsv", curve.str());
  const DurationReport d = duration_report(r.duration, select(items, Split::train), select(items, Split::test));
  Table dr{{"split", "items", "predictor_mae_s", "mean_baseline_mae_s"}, {}};
  dr.add({"test", std::to_string(d.items), fixed(d.predictor_mae, 6), fixed(d.baseline_mae, 6)});
  write_file(dir / "duration_report.tsv", dr.str());
  write_run_record(run, "tune", cfg, {run.manifest(), run.cfm_model()});
  return r;
}

}  // namespace cotdub::pipeline
