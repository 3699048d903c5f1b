#pragma once

// Run configuration: a human-readable "key = value" file ('#' starts a
// comment). Every stage snapshots the fully-resolved config next to its
// outputs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cotdub/cfg_sampler.hpp"
#include "cotdub/features.hpp"
#include "cotdub/flow_matching.hpp"
#include "cotdub/preference.hpp"

namespace cotdub::pipeline {

struct RunConfig {
  std::uint64_t seed = 7;

  // data
  int n_items = 600;
  double frame_hop = 0.04;
  double fps = 25.0;

  // stage 1.1
  int sft_steps = 300;
  int sft_batch = 32;
  double sft_lr = 0.5;

  // stage 1.2
  int mpo_steps = 200;
  int mpo_batch = 32;
  double mpo_lr = 0.5;
  DPOConfig dpo;
  MPOWeights weights;
  int eval_samples = 20;  // sampled traces per held-out item for the format-validity rate

  // stage 2
  FlowConfig flow;
  double dropout_p = 0.05;
  double prompt_prob = 0.7;
  int cfm_steps = 1500;
  int cfm_batch = 16;
  double cfm_lr = 0.02;
  int tune_steps = 1500;
  int tune_batch = 16;
  double tune_lr = 0.02;
  double dur_lr = 0.02;

  // inference / evaluation
  GuidanceScales scales;
  OdeScheme ode_scheme = OdeScheme::euler;
  int cepstral_coeffs = 10;

  void validate() const;
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw std::invalid_argument("config: bad value for '" + key + "': '" + v + "'");
  return out;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': '" + v + "'");
}

}  // namespace detail

/// Visits every config entry as (key, reference). Keeps the parser and the
/// serializer on one key list.
template <class Config, class Fn>
void for_each_entry(Config& c, Fn&& fn) {
  fn("seed", c.seed);
  fn("n_items", c.n_items);
  fn("frame_hop", c.frame_hop);
  fn("fps", c.fps);
  fn("sft_steps", c.sft_steps);
  fn("sft_batch", c.sft_batch);
  fn("sft_lr", c.sft_lr);
  fn("mpo_steps", c.mpo_steps);
  fn("mpo_batch", c.mpo_batch);
  fn("mpo_lr", c.mpo_lr);
  fn("beta", c.dpo.beta);
  fn("delta", c.dpo.delta);
  fn("length_normalize", c.dpo.length_normalize);
  fn("w_p", c.weights.w_p);
  fn("w_q", c.weights.w_q);
  fn("w_g", c.weights.w_g);
  fn("w_f", c.weights.w_f);
  fn("w_c", c.weights.w_c);
  fn("eval_samples", c.eval_samples);
  fn("sigma_min", c.flow.sigma_min);
  fn("ode_steps", c.flow.ode_steps);
  fn("dropout_p", c.dropout_p);
  fn("prompt_prob", c.prompt_prob);
  fn("cfm_steps", c.cfm_steps);
  fn("cfm_batch", c.cfm_batch);
  fn("cfm_lr", c.cfm_lr);
  fn("tune_steps", c.tune_steps);
  fn("tune_batch", c.tune_batch);
  fn("tune_lr", c.tune_lr);
  fn("dur_lr", c.dur_lr);
  fn("lambda_V", c.scales.lambda_V);
  fn("lambda_C", c.scales.lambda_C);
  fn("lambda_T", c.scales.lambda_T);
  fn("ode_scheme", c.ode_scheme);
  fn("cepstral_coeffs", c.cepstral_coeffs);
}

inline std::string value_to_string(double v) { return format_double(v); }
inline std::string value_to_string(bool v) { return v ? "true" : "false"; }
inline std::string value_to_string(OdeScheme v) { return v == OdeScheme::euler ? "euler" : "midpoint"; }
template <class T>
std::string value_to_string(T v) {
  return std::to_string(v);
}

inline void assign_value(const std::string& key, const std::string& v, OdeScheme& out) {
  if (v == "euler") {
    out = OdeScheme::euler;
  } else if (v == "midpoint") {
    out = OdeScheme::midpoint;
  } else {
    throw std::invalid_argument("config: ode_scheme must be euler or midpoint, got '" + v + "'");
  }
  (void)key;
}
inline void assign_value(const std::string& key, const std::string& v, double& out) {
  try {
    out = parse_double(v);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("config: bad value for '" + key + "': '" + v + "'");
  }
}
template <class T>
void assign_value(const std::string& key, const std::string& v, T& out) {
  out = detail::parse_value<T>(key, v);
}

inline void RunConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("config: ") + name + " must be > 0");
  };
  if (n_items < 3) throw std::invalid_argument("config: n_items must be >= 3");
  positive("frame_hop", frame_hop);
  positive("fps", fps);
  for (int v : {sft_batch, mpo_batch, cfm_batch, tune_batch, eval_samples}) {
    if (v < 1) throw std::invalid_argument("config: batch sizes and eval_samples must be >= 1");
  }
  for (int v : {sft_steps, mpo_steps, cfm_steps, tune_steps}) {
    if (v < 0) throw std::invalid_argument("config: step counts must be >= 0");
  }
  for (double v : {sft_lr, mpo_lr, cfm_lr, tune_lr, dur_lr}) {
    if (!(v >= 0.0)) throw std::invalid_argument("config: learning rates must be >= 0");
  }
  dpo.validate();
  weights.validate();
  flow.validate();
  scales.validate();
  if (!(dropout_p >= 0.0 && dropout_p <= 1.0)) throw std::invalid_argument("config: dropout_p must be in [0, 1]");
  if (!(prompt_prob >= 0.0 && prompt_prob <= 1.0)) throw std::invalid_argument("config: prompt_prob must be in [0, 1]");
  if (cepstral_coeffs < 1) throw std::invalid_argument("config: cepstral_coeffs must be >= 1");
}

inline RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim_copy(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim_copy(line.substr(0, eq));
    const std::string value = detail::trim_copy(line.substr(eq + 1));
    bool found = false;
    for_each_entry(c, [&](const char* name, auto& field) {
      if (key == name) {
        assign_value(key, value, field);
        found = true;
      }
    });
    if (!found) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  return parse_config(in);
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for_each_entry(const_cast<RunConfig&>(c), [&](const char* name, const auto& field) {
    out += name;
    out += " = ";
    out += value_to_string(field);
    out += '\n';
  });
  return out;
}

}  // namespace cotdub::pipeline
