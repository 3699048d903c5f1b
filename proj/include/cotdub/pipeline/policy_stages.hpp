#pragma once

// Stage 1: CoT supervised fine-tuning and mixed preference optimization of
// the toy policy, plus the scene-classification report.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cotdub/cot_trace.hpp"
#include "cotdub/pipeline/config.hpp"
#include "cotdub/pipeline/io.hpp"
#include "cotdub/pipeline/world.hpp"
#include "cotdub/policy.hpp"

namespace cotdub::pipeline {

inline constexpr std::uint64_t kStreamSft = 11;
inline constexpr std::uint64_t kStreamMpo = 12;
inline constexpr std::uint64_t kStreamPolicyEval = 13;

inline std::vector<const Item*> select(const std::vector<Item>& items, Split split) {
  std::vector<const Item*> out;
  for (const auto& it : items) {
    if (it.split == split) out.push_back(&it);
  }
  return out;
}

inline PolicyResponse gold_response(const Item& it) { return PolicyResponse{0, it.gold}; }

/// Conclusion recovered from the policy's greedy trace, or nothing when the
/// trace fails validation.
struct TraceDecision {
  std::string text;
  bool valid = false;
  std::optional<Conclusion> conclusion;
};

inline TraceDecision decide(const ToyPolicy& policy, const Item& it) {
  const PolicyPrompt prompt = policy_prompt(it.visual);
  TraceDecision d;
  d.text = response_text(prompt.observation, policy.greedy(prompt));
  const ParseResult parsed = parse_trace(d.text);
  if (const auto* trace = std::get_if<CoTTrace>(&parsed)) {
    d.valid = true;
    d.conclusion = extract_answer(*trace);
  }
  return d;
}

struct SceneScores {
  int items = 0;
  int correct = 0;
  std::array<int, 3> hits{};
  std::array<int, 3> support{};
  int samples = 0;
  int valid_samples = 0;

  double accuracy() const { return items ? static_cast<double>(correct) / items : 0.0; }
  double recall(std::size_t scene) const {
    return support[scene] ? static_cast<double>(hits[scene]) / support[scene] : 0.0;
  }
  double mean_recall() const {
    double s = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (support[k]) {
        s += recall(k);
        ++n;
      }
    }
    return n ? s / n : 0.0;
  }
  double format_valid_rate() const { return samples ? static_cast<double>(valid_samples) / samples : 0.0; }
};

struct PolicyEvaluation {
  SceneScores level1;
  SceneScores level2;
  SceneScores all;
};

/// Greedy scene accuracy and per-scene recall, plus the validity rate of
/// `samples_per_item` sampled traces per item (seeded, so two policies see
/// the same uniforms).
inline PolicyEvaluation evaluate_policy(const ToyPolicy& policy, const std::vector<const Item*>& items,
                                        int samples_per_item, std::uint64_t seed) {
  auto rng = stream_rng(seed, kStreamPolicyEval);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  PolicyEvaluation ev;
  for (const Item* it : items) {
    const TraceDecision d = decide(policy, *it);
    const bool correct = d.conclusion && d.conclusion->scene == it->gold.scene;
    const auto scene = static_cast<std::size_t>(it->gold.scene);
    const PolicyPrompt prompt = policy_prompt(it->visual);
    int valid = 0;
    for (int s = 0; s < samples_per_item; ++s) {
      std::array<double, kPolicyHeads> u{};
      for (auto& x : u) x = u01(rng);
      const PolicyResponse r = policy.sample(prompt, u);
      if (validate_format(response_text(prompt.observation, r)).f_true) ++valid;
    }
    for (SceneScores* sc : {&ev.all, it->level == Level::level1 ? &ev.level1 : &ev.level2}) {
      ++sc->items;
      sc->correct += correct ? 1 : 0;
      ++sc->support[scene];
      sc->hits[scene] += correct ? 1 : 0;
      sc->samples += samples_per_item;
      sc->valid_samples += valid;
    }
  }
  return ev;
}

inline std::string pct(double v) { return fixed(100.0 * v, 2); }

/// Ave.Acc, Ave.Recall and per-scene recall (A dialogue, B monologue,
/// C narration), in percent.
inline Table policy_report(const PolicyEvaluation& ev) {
  Table t{{"level", "items", "Ave.Acc", "Ave.Recall", "A.Recall", "B.Recall", "C.Recall", "FormatValid"}, {}};
  auto row = [&](const char* name, const SceneScores& s) {
    t.add({name, std::to_string(s.items), pct(s.accuracy()), pct(s.mean_recall()), pct(s.recall(0)), pct(s.recall(1)),
           pct(s.recall(2)), pct(s.format_valid_rate())});
  };
  row("level1", ev.level1);
  row("level2", ev.level2);
  row("all", ev.all);
  return t;
}

template <class Rng>
std::vector<const Item*> draw_batch(const std::vector<const Item*>& pool, int size, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<const Item*> out;
  out.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

inline ToyPolicy make_policy() { return ToyPolicy(kVisualDim); }

struct SftResult {
  ToyPolicy policy = make_policy();
  std::vector<double> losses;
};

inline SftResult train_sft(const std::vector<Item>& items, const RunConfig& cfg) {
  const auto pool = select(items, Split::train);
  if (pool.empty()) throw std::runtime_error("train-sft: no training items");
  auto rng = stream_rng(cfg.seed, kStreamSft);
  SftResult out;
  for (int step = 0; step < cfg.sft_steps; ++step) {
    std::vector<SFTExample> batch;
    for (const Item* it : draw_batch(pool, cfg.sft_batch, rng)) {
      batch.push_back({policy_prompt(it->visual), gold_response(*it)});
    }
    out.losses.push_back(sft_step(out.policy, batch, cfg.sft_lr));
  }
  return out;
}

/// Chosen is the gold response. Rejected is either a well-formed trace with a
/// wrong scene or the gold answer under a random format corruption.
template <class Rng>
PreferenceItem make_pair(const Item& it, Rng& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> other_scene(1, 2);
  std::uniform_int_distribution<std::size_t> bad_format(1, kFormatChoices - 1);
  PreferenceSample s;
  s.prompt = policy_prompt(it.visual);
  s.gold = it.gold;
  s.chosen = gold_response(it);
  s.rejected = s.chosen;
  if (coin(rng) == 0) {
    s.rejected.answer.set(LabelAxis::scene, (static_cast<std::size_t>(it.gold.scene) + other_scene(rng)) % 3);
  } else {
    s.rejected.format = bad_format(rng);
  }
  return make_preference_item(std::move(s));
}

struct MpoResult {
  ToyPolicy policy = make_policy();
  std::vector<MPOStepResult> steps;
};

inline MpoResult train_mpo(const std::vector<Item>& items, const ToyPolicy& sft_policy, const RunConfig& cfg) {
  const auto pool = select(items, Split::train);
  if (pool.empty()) throw std::runtime_error("train-mpo: no training items");
  auto rng = stream_rng(cfg.seed, kStreamMpo);
  MpoResult out;
  out.policy = sft_policy;
  for (int step = 0; step < cfg.mpo_steps; ++step) {
    std::vector<PreferenceItem> batch;
    for (const Item* it : draw_batch(pool, cfg.mpo_batch, rng)) batch.push_back(make_pair(*it, rng));
    MPOStepResult r = mpo_step(out.policy, sft_policy, batch, cfg.dpo, cfg.weights, cfg.mpo_lr);
    r.update.resize(0);
    out.steps.push_back(std::move(r));
  }
  return out;
}

inline Table mpo_curve(const std::vector<MPOStepResult>& steps) {
  Table t{{"step", "L_p", "L_q", "L_g", "L_f", "L_c", "total"}, {}};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& c = steps[i].components;
    t.add({std::to_string(i), fixed(c.L_p, 6), fixed(c.L_q, 6), fixed(c.L_g, 6), fixed(c.L_f, 6), fixed(c.L_c, 6),
           fixed(steps[i].total, 6)});
  }
  return t;
}

inline ToyPolicy load_policy(const fs::path& p) {
  ToyPolicy policy = make_policy();
  policy.set_parameters(load_parameters(p, "toy_policy"));
  return policy;
}

// ---------------------------------------------------------------------------
// Stage runners

struct PolicyStageSummary {
  PolicyEvaluation test;
};

inline PolicyStageSummary run_train_sft(const RunConfig& cfg, const RunLayout& run) {
  const auto items = load_dataset(run.manifest());
  const SftResult r = train_sft(items, cfg);
  const fs::path dir = run.stage("sft");
  save_parameters(run.sft_policy(), "toy_policy", r.policy.parameters());
  Table curve{{"step", "loss"}, {}};
  for (std::size_t i = 0; i < r.losses.size(); ++i) curve.add({std::to_string(i), fixed(r.losses[i], 6)});
  write_file(dir / "curve.tsv", curve.str());
  PolicyStageSummary s{evaluate_policy(r.policy, select(items, Split::test), cfg.eval_samples, cfg.seed)};
  write_file(dir / "report.tsv", policy_report(s.test).str());
  write_run_record(run, "sft", cfg, {run.manifest()});
  return s;
}

inline PolicyStageSummary run_train_mpo(const RunConfig& cfg, const RunLayout& run) {
  require_file(run.sft_policy(), "SFT checkpoint");
  const auto items = load_dataset(run.manifest());
  const ToyPolicy sft = load_policy(run.sft_policy());
  const MpoResult r = train_mpo(items, sft, cfg);
  const fs::path dir = run.stage("mpo");
  save_parameters(run.mpo_policy(), "toy_policy", r.policy.parameters());
  write_file(dir / "curve.tsv", mpo_curve(r.steps).str());
  PolicyStageSummary s{evaluate_policy(r.policy, select(items, Split::test), cfg.eval_samples, cfg.seed)};
  write_file(dir / "report.tsv", policy_report(s.test).str());
  write_run_record(run, "mpo", cfg, {run.manifest(), run.sft_policy()});
  return s;
}

}  // namespace cotdub::pipeline
