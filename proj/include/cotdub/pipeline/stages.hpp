#pragma once

// All pipeline stages behind the command-line verbs.

#include "cotdub/pipeline/config.hpp"
#include "cotdub/pipeline/flow_stages.hpp"
#include "cotdub/pipeline/infer_eval.hpp"
#include "cotdub/pipeline/io.hpp"
#include "cotdub/pipeline/policy_stages.hpp"
#include "cotdub/pipeline/world.hpp"

namespace cotdub::pipeline {

inline WorldOptions world_options(const RunConfig& cfg) { return {cfg.n_items, cfg.frame_hop, cfg.fps}; }

inline World run_synth_data(const RunConfig& cfg, const RunLayout& run) {
  World w = synthesize_world(world_options(cfg), cfg.seed);
  fs::remove_all(run.data());
  write_dataset(run.data(), w);
  write_run_record(run, "synth", cfg, {});
  return w;
}

}  // namespace cotdub::pipeline
