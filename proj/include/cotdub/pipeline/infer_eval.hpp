#pragma once

// End-to-end dubbing chain (policy trace -> conclusion -> conditions ->
// duration -> guided ODE sampling) and the objective evaluation report.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotdub/cfg_sampler.hpp"
#include "cotdub/metrics.hpp"
#include "cotdub/pipeline/config.hpp"
#include "cotdub/pipeline/flow_stages.hpp"
#include "cotdub/pipeline/io.hpp"
#include "cotdub/pipeline/policy_stages.hpp"
#include "cotdub/pipeline/world.hpp"

namespace cotdub::pipeline {

inline constexpr std::uint64_t kStreamInfer = 31;
inline constexpr std::uint64_t kStreamSampler = 32;

/// Voice prompts for both evaluation settings: the item's own recording
/// (Dub-1.0) and another recording by the same speaker (Dub-2.0). When the
/// predicted scene is wrong both are replaced by a random other speaker's
/// recording.
struct PromptChoice {
  const Item* dub1 = nullptr;
  const Item* dub2 = nullptr;
  bool swapped = false;
};

template <class Rng>
PromptChoice choose_prompts(const Item& it, const std::vector<const Item*>& all, bool scene_correct, Rng& rng) {
  PromptChoice pc;
  if (!scene_correct) {
    std::vector<const Item*> others;
    for (const Item* p : all) {
      if (p->speaker != it.speaker) others.push_back(p);
    }
    if (!others.empty()) {
      const Item* r = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
      return {r, r, true};
    }
  }
  pc.dub1 = &it;
  pc.dub2 = other_utterance(it, all, rng);
  if (!pc.dub2) pc.dub2 = &it;
  return pc;
}

struct DubbingModels {
  const ToyPolicy& policy;
  const VelocityModel& flow;
  const DurationModel& duration;
};

struct GeneratedItem {
  std::string id;
  TraceDecision trace;
  bool fallback = false;
  bool scene_correct = false;
  Eigen::Index frames = 0;
  std::string prompt_dub1;
  std::string prompt_dub2;
  bool prompt_swapped = false;
  FeatureSeq dub1;
  FeatureSeq dub2;
};

inline std::uint64_t item_sampler_seed(std::uint64_t seed, std::size_t index) {
  return stream_rng(seed, kStreamSampler + (static_cast<std::uint64_t>(index) << 8))();
}

inline SamplerConfig sampler_config(const RunConfig& cfg, std::uint64_t seed) {
  return SamplerConfig{cfg.flow.ode_steps, cfg.ode_scheme, seed};
}

/// Full chain for one item. An invalid trace falls back to the null
/// conclusion.
template <class Rng>
GeneratedItem dub_item(const DubbingModels& m, const Item& it, const std::vector<const Item*>& all,
                       const RunConfig& cfg, std::uint64_t sampler_seed, Rng& rng) {
  GeneratedItem g;
  g.id = it.id;
  g.trace = decide(m.policy, it);
  g.fallback = !g.trace.conclusion.has_value();
  g.scene_correct = g.trace.conclusion && g.trace.conclusion->scene == it.gold.scene;
  Nullable<ConclusionConditions> conclusion;
  if (g.trace.conclusion) conclusion = ConclusionConditions{*g.trace.conclusion};

  const PromptChoice pc = choose_prompts(it, all, g.scene_correct, rng);
  g.prompt_dub1 = pc.dub1->id;
  g.prompt_dub2 = pc.dub2->id;
  g.prompt_swapped = pc.swapped;

  g.frames = predict_duration(m.duration, it.visual, conclusion, cfg.frame_hop);
  const SamplerConfig sc = sampler_config(cfg, sampler_seed);
  const auto gen = [&](const Item* prompt) {
    const DubbingConditions c = assemble_conditions(it.visual, conclusion, it.transcript, speech_prompt(*prompt));
    return integrate(m.flow, c, g.frames, kSpeechDim, cfg.scales, sc, cfg.frame_hop);
  };
  g.dub1 = gen(pc.dub1);
  g.dub2 = gen(pc.dub2);
  return g;
}

inline std::vector<const Item*> pointers(const std::vector<Item>& items) {
  std::vector<const Item*> out;
  for (const auto& it : items) out.push_back(&it);
  return out;
}

/// Test split, or the listed ids in the order given.
inline std::vector<const Item*> infer_targets(const std::vector<Item>& items, const std::vector<std::string>& ids) {
  if (ids.empty()) return select(items, Split::test);
  std::vector<const Item*> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(items.begin(), items.end(), [&](const Item& x) { return x.id == id; });
    if (it == items.end()) throw std::invalid_argument("infer: unknown item id '" + id + "'");
    out.push_back(&*it);
  }
  return out;
}

struct InferSummary {
  int items = 0;
  int fallbacks = 0;
  int scene_correct = 0;
};

inline InferSummary run_infer(const RunConfig& cfg, const RunLayout& run, const std::vector<std::string>& ids = {}) {
  require_file(run.mpo_policy(), "MPO policy checkpoint");
  require_file(run.tune_model(), "tuned flow checkpoint");
  require_file(run.tune_duration(), "duration checkpoint");
  const auto items = load_dataset(run.manifest());
  const ToyPolicy policy = load_policy(run.mpo_policy());
  const ConditionalFlowField flow = load_flow_model(run.tune_model());
  const LogLinearDurationPredictor duration = load_duration_model(run.tune_duration());
  const DubbingModels models{policy, flow, duration};
  const auto all = pointers(items);
  const auto targets = infer_targets(items, ids);

  const fs::path dir = run.stage("infer");
  fs::remove_all(dir);
  auto rng = stream_rng(cfg.seed, kStreamInfer);
  InferSummary sum;
  std::vector<json> traces;
  json entries = json::array();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Item& it = *targets[i];
    const GeneratedItem g = dub_item(models, it, all, cfg, item_sampler_seed(cfg.seed, i), rng);
    write_features(dir / "dub1" / (g.id + ".tsv"), g.dub1);
    write_features(dir / "dub2" / (g.id + ".tsv"), g.dub2);
    traces.push_back(trace_record(g.id, g.trace.text, it.gold));
    json e;
    e["id"] = g.id;
    e["trace_valid"] = g.trace.valid;
    e["fallback"] = g.fallback;
    e["predicted"] = g.trace.conclusion ? gold_json(*g.trace.conclusion) : json(nullptr);
    e["scene_correct"] = g.scene_correct;
    e["frames"] = g.frames;
    e["prompt_dub1"] = g.prompt_dub1;
    e["prompt_dub2"] = g.prompt_dub2;
    e["prompt_swapped"] = g.prompt_swapped;
    e["dub1"] = "dub1/" + g.id + ".tsv";
    e["dub2"] = "dub2/" + g.id + ".tsv";
    entries.push_back(e);
    ++sum.items;
    sum.fallbacks += g.fallback ? 1 : 0;
    sum.scene_correct += g.scene_correct ? 1 : 0;
  }
  json m;
  m["scales"] = {{"lambda_V", cfg.scales.lambda_V}, {"lambda_C", cfg.scales.lambda_C}, {"lambda_T", cfg.scales.lambda_T}};
  m["ode_steps"] = cfg.flow.ode_steps;
  m["ode_scheme"] = value_to_string(cfg.ode_scheme);
  m["seed"] = cfg.seed;
  m["frame_hop"] = cfg.frame_hop;
  m["items"] = sum.items;
  m["fallbacks"] = sum.fallbacks;
  m["entries"] = entries;
  write_file(run.infer_manifest(), m.dump(2) + '\n');
  write_file(dir / "traces.jsonl", to_jsonl(traces));
  write_run_record(run, "infer", cfg, {run.manifest(), run.mpo_policy(), run.tune_model(), run.tune_duration()});
  return sum;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Speaker embedding: per-channel mean of the acoustic channels.
inline Vector speaker_embedding(const FeatureSeq& s) {
  return s.frames.leftCols(kAcousticDim).colwise().mean().transpose();
}

/// Emotion embedding: acoustic channel means followed by their standard deviations.
inline Vector emotion_embedding(const FeatureSeq& s) {
  const Matrix a = s.frames.leftCols(kAcousticDim);
  const Eigen::RowVectorXd mean = a.colwise().mean();
  const Eigen::RowVectorXd var = (a.rowwise() - mean).array().square().colwise().mean();
  Vector e(2 * kAcousticDim);
  e << mean.transpose(), var.cwiseSqrt().transpose();
  return e;
}

struct PairScores {
  double spk_sim = 0.0;
  double emo_sim = 0.0;
  std::size_t word_errors = 0;
  std::size_t ref_words = 0;
  double mcd = 0.0;
  double mcd_sl = 0.0;
};

/// Generated vs reference; WER decodes the generated content channels
/// against the reference transcript.
inline PairScores score_pair(const FeatureSeq& reference, const FeatureSeq& generated, const std::string& transcript,
                             Eigen::Index cepstral_coeffs) {
  PairScores s;
  s.spk_sim = cosine_sim(speaker_embedding(reference), speaker_embedding(generated));
  s.emo_sim = cosine_sim(emotion_embedding(reference), emotion_embedding(generated));
  const auto ref_words = normalize_words(transcript);
  s.word_errors = edit_counts(ref_words, decode_transcript(generated)).total();
  s.ref_words = ref_words.size();
  const CepstralSeq a = cepstra_from_features(reference, cepstral_coeffs, FeatureScale::log);
  const CepstralSeq b = cepstra_from_features(generated, cepstral_coeffs, FeatureScale::log);
  s.mcd = mcd(a, b);
  s.mcd_sl = mcd_sl(a, b);
  return s;
}

struct SettingScores {
  int items = 0;
  double spk_sim = 0.0;  // means
  double emo_sim = 0.0;
  double wer = 0.0;  // corpus-level
  double mcd = 0.0;
  double mcd_sl = 0.0;
};

inline SettingScores aggregate(const std::vector<PairScores>& v) {
  SettingScores s;
  std::size_t errors = 0;
  std::size_t words = 0;
  for (const auto& p : v) {
    s.spk_sim += p.spk_sim;
    s.emo_sim += p.emo_sim;
    s.mcd += p.mcd;
    s.mcd_sl += p.mcd_sl;
    errors += p.word_errors;
    words += p.ref_words;
  }
  s.items = static_cast<int>(v.size());
  if (!v.empty()) {
    const double n = static_cast<double>(v.size());
    s.spk_sim /= n;
    s.emo_sim /= n;
    s.mcd /= n;
    s.mcd_sl /= n;
    s.wer = static_cast<double>(errors) / static_cast<double>(words);
  }
  return s;
}

struct EvalSummary {
  SettingScores ground_truth;
  SettingScores dub1;
  SettingScores dub2;
  int fallbacks = 0;
};

/// SPK-SIM, WER and EMO-SIM in percent; MCD and MCD-SL in dB.
inline Table eval_report(const EvalSummary& e) {
  Table t{{"setting", "items", "SPK-SIM", "WER", "EMO-SIM", "MCD", "MCD-SL", "fallbacks"}, {}};
  auto row = [&](const char* name, const SettingScores& s) {
    t.add({name, std::to_string(s.items), pct(s.spk_sim), pct(s.wer), pct(s.emo_sim), fixed(s.mcd), fixed(s.mcd_sl),
           std::to_string(e.fallbacks)});
  };
  row("Ground-Truth", e.ground_truth);
  row("Dub-1.0", e.dub1);
  row("Dub-2.0", e.dub2);
  return t;
}

inline EvalSummary run_eval(const RunConfig& cfg, const RunLayout& run) {
  require_file(run.infer_manifest(), "inference manifest");
  const auto items = load_dataset(run.manifest());
  std::map<std::string, const Item*> by_id;
  for (const auto& it : items) by_id[it.id] = &it;
  const auto m = json::parse(read_file(run.infer_manifest()));
  const fs::path infer_dir = run.stage("infer");

  std::vector<PairScores> gt;
  std::vector<PairScores> d1;
  std::vector<PairScores> d2;
  Table per_item{{"id", "setting", "SPK-SIM", "WER", "EMO-SIM", "MCD", "MCD-SL"}, {}};
  auto add_row = [&](const std::string& id, const char* setting, const PairScores& p) {
    per_item.add({id, setting, pct(p.spk_sim), pct(static_cast<double>(p.word_errors) / p.ref_words), pct(p.emo_sim),
                  fixed(p.mcd), fixed(p.mcd_sl)});
  };
  const auto K = static_cast<Eigen::Index>(cfg.cepstral_coeffs);
  std::vector<fs::path> inputs{run.manifest(), run.infer_manifest()};
  for (const auto& e : m.at("entries")) {
    const std::string id = e.at("id").get<std::string>();
    const auto found = by_id.find(id);
    if (found == by_id.end()) throw std::runtime_error("eval: item " + id + " is not in the manifest");
    const Item& it = *found->second;
    const fs::path p1 = infer_dir / e.at("dub1").get<std::string>();
    const fs::path p2 = infer_dir / e.at("dub2").get<std::string>();
    require_file(p1, "generated features");
    require_file(p2, "generated features");
    inputs.push_back(p1);
    inputs.push_back(p2);
    gt.push_back(score_pair(it.speech, it.speech, it.transcript.text, K));
    d1.push_back(score_pair(it.speech, read_features(p1), it.transcript.text, K));
    d2.push_back(score_pair(it.speech, read_features(p2), it.transcript.text, K));
    add_row(id, "Ground-Truth", gt.back());
    add_row(id, "Dub-1.0", d1.back());
    add_row(id, "Dub-2.0", d2.back());
  }
  EvalSummary s{aggregate(gt), aggregate(d1), aggregate(d2), m.at("fallbacks").get<int>()};
  const fs::path dir = run.stage("eval");
  write_file(run.eval_report(), eval_report(s).str());
  write_file(dir / "items.tsv", per_item.str());
  write_run_record(run, "eval", cfg, inputs);
  return s;
}

}  // namespace cotdub::pipeline
