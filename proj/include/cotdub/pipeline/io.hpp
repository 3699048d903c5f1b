#pragma once

// Run-directory file surfaces: the JSONL manifest and trace corpus, model
// checkpoints, per-stage run records and content hashes.

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotdub/features.hpp"
#include "cotdub/pipeline/config.hpp"
#include "cotdub/pipeline/world.hpp"

namespace cotdub::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Reported when a stage's declared input is absent.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInput("missing input " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw MissingInput("missing " + what + ": " + p.string());
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string hex(const unsigned char* data, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[data[i] >> 4]);
    s.push_back(digits[data[i] & 15]);
  }
  return s;
}

inline std::string sha1_hex(const std::string& bytes) {
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md);
  return hex(md, SHA_DIGEST_LENGTH);
}

/// Object id of a git blob with this content.
inline std::string git_blob_hash(const std::string& content) {
  std::string obj = "blob " + std::to_string(content.size());
  obj.push_back('\0');
  obj += content;
  return sha1_hex(obj);
}

/// Hash of a set of named blobs: the blob hash of the sorted "<blob-id> <name>" listing.
inline std::string combined_hash(const std::map<std::string, std::string>& name_to_blob) {
  std::string listing;
  for (const auto& [name, blob] : name_to_blob) listing += blob + ' ' + name + '\n';
  return git_blob_hash(listing);
}

// ---------------------------------------------------------------------------
// Run layout

struct RunLayout {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path manifest() const { return data() / "manifest.jsonl"; }
  fs::path gold_traces() const { return data() / "traces.jsonl"; }
  fs::path stage(std::string_view name) const { return root / std::string(name); }
  fs::path sft_policy() const { return stage("sft") / "policy.json"; }
  fs::path mpo_policy() const { return stage("mpo") / "policy.json"; }
  fs::path cfm_model() const { return stage("cfm") / "model.json"; }
  fs::path tune_model() const { return stage("tune") / "model.json"; }
  fs::path tune_duration() const { return stage("tune") / "duration.json"; }
  fs::path infer_manifest() const { return stage("infer") / "run_manifest.json"; }
  fs::path eval_report() const { return stage("eval") / "report.tsv"; }
};

inline std::string relative_to(const fs::path& p, const fs::path& base) {
  return p.lexically_relative(base).generic_string();
}

/// Writes <stage>/run.json: config snapshot, seed and the content hash of the inputs.
inline void write_run_record(const RunLayout& run, std::string_view stage, const RunConfig& cfg,
                             const std::vector<fs::path>& inputs, const json& extra = json::object()) {
  std::map<std::string, std::string> blobs;
  for (const auto& p : inputs) blobs[relative_to(p, run.root)] = git_blob_hash(read_file(p));
  const std::string snapshot = serialize_config(cfg);
  blobs["<config>"] = git_blob_hash(snapshot);

  json j;
  j["stage"] = std::string(stage);
  j["seed"] = cfg.seed;
  json c = json::object();
  for_each_entry(const_cast<RunConfig&>(cfg),
                 [&](const char* name, const auto& field) { c[name] = value_to_string(field); });
  j["config"] = c;
  json in = json::array();
  for (const auto& [name, blob] : blobs) in.push_back({{"path", name}, {"blob", blob}});
  j["inputs"] = in;
  j["input_hash"] = combined_hash(blobs);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_file(run.stage(stage) / "run.json", j.dump(2) + '\n');
  write_file(run.stage(stage) / "config.snapshot", snapshot);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::string id;
  std::string video_features_path;  // relative to the manifest's directory
  std::string transcript;
  std::string scene;
  std::string gender;
  std::string age;
  std::string emotion;
  std::string features_path;
  double duration_s = 0.0;
  std::string split;
  std::string level;
  int speaker = 0;
};

inline json to_json(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["video_features_path"] = r.video_features_path;
  j["transcript"] = r.transcript;
  j["scene"] = r.scene;
  j["gender"] = r.gender;
  j["age"] = r.age;
  j["emotion"] = r.emotion;
  j["features_path"] = r.features_path;
  j["duration_s"] = r.duration_s;
  j["split"] = r.split;
  j["level"] = r.level;
  j["speaker"] = r.speaker;
  return j;
}

inline ManifestRecord manifest_record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.video_features_path = j.at("video_features_path").get<std::string>();
  r.transcript = j.at("transcript").get<std::string>();
  r.scene = j.at("scene").get<std::string>();
  r.gender = j.at("gender").get<std::string>();
  r.age = j.at("age").get<std::string>();
  r.emotion = j.at("emotion").get<std::string>();
  r.features_path = j.at("features_path").get<std::string>();
  r.duration_s = j.at("duration_s").get<double>();
  r.split = j.at("split").get<std::string>();
  r.level = j.at("level").get<std::string>();
  r.speaker = j.at("speaker").get<int>();
  if (!(r.duration_s > 0.0)) throw std::invalid_argument("manifest " + r.id + ": duration_s must be > 0");
  return r;
}

inline std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingInput("missing input " + p.string());
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string to_jsonl(const std::vector<json>& records) {
  std::string s;
  for (const auto& r : records) s += r.dump() + '\n';
  return s;
}

inline json gold_json(const Conclusion& c) {
  json g;
  for (LabelAxis axis : kAllAxes) g[std::string(axis_key(axis))] = std::string(label_name(axis, c.index(axis)));
  return g;
}

inline Conclusion conclusion_from_json(const json& g) {
  Conclusion c;
  for (LabelAxis axis : kAllAxes) c.set(axis, parse_label(axis, g.at(std::string(axis_key(axis))).get<std::string>()));
  return c;
}

/// Trace corpus record: {id, text, gold: {scene, gender, age, emotion}}.
inline json trace_record(const std::string& id, const std::string& text, const Conclusion& gold) {
  json j;
  j["id"] = id;
  j["text"] = text;
  j["gold"] = gold_json(gold);
  return j;
}

inline ManifestRecord make_record(const Item& it) {
  ManifestRecord r;
  r.id = it.id;
  r.video_features_path = "visual/" + it.id + ".tsv";
  r.features_path = "speech/" + it.id + ".tsv";
  r.transcript = it.transcript.text;
  r.scene = std::string(to_string(it.gold.scene));
  r.gender = std::string(to_string(it.gold.attributes.gender));
  r.age = std::string(to_string(it.gold.attributes.age));
  r.emotion = std::string(to_string(it.gold.attributes.emotion));
  r.duration_s = it.duration_s;
  r.split = std::string(to_string(it.split));
  r.level = std::string(to_string(it.level));
  r.speaker = it.speaker;
  return r;
}

/// Writes manifest.jsonl, traces.jsonl and every feature file under `dir`.
inline void write_dataset(const fs::path& dir, const World& world) {
  std::vector<json> manifest;
  std::vector<json> traces;
  for (const auto& it : world.items) {
    const ManifestRecord r = make_record(it);
    write_features(dir / r.video_features_path, FeatureSeq(it.visual.frames, 1.0 / it.visual.fps));
    write_features(dir / r.features_path, it.speech);
    manifest.push_back(to_json(r));
    traces.push_back(trace_record(it.id, gold_trace_text(it), it.gold));
  }
  write_file(dir / "manifest.jsonl", to_jsonl(manifest));
  write_file(dir / "traces.jsonl", to_jsonl(traces));
}

/// Items loaded from a manifest. The planted observation is not stored; it is
/// read back from the visual channels.
inline std::vector<Item> load_dataset(const fs::path& manifest_path) {
  require_file(manifest_path, "manifest");
  const fs::path dir = manifest_path.parent_path();
  std::vector<Item> items;
  for (const auto& j : read_jsonl(manifest_path)) {
    const ManifestRecord r = manifest_record_from_json(j);
    Item it;
    it.id = r.id;
    it.speaker = r.speaker;
    it.gold.set(LabelAxis::scene, parse_label(LabelAxis::scene, r.scene));
    it.gold.set(LabelAxis::gender, parse_label(LabelAxis::gender, r.gender));
    it.gold.set(LabelAxis::age, parse_label(LabelAxis::age, r.age));
    it.gold.set(LabelAxis::emotion, parse_label(LabelAxis::emotion, r.emotion));
    it.transcript = TokenSeq{tokenize_transcript(r.transcript), r.transcript};
    require_file(dir / r.video_features_path, "visual features");
    require_file(dir / r.features_path, "speech features");
    const FeatureSeq vis = read_features(dir / r.video_features_path);
    it.visual = VisualFeatureSeq{vis.frames, 1.0 / vis.frame_hop};
    it.speech = read_features(dir / r.features_path);
    it.duration_s = r.duration_s;
    if (std::abs(it.speech.duration() - it.duration_s) > it.speech.frame_hop) {
      throw std::runtime_error("manifest " + r.id + ": duration_s disagrees with the feature frame count");
    }
    it.split = parse_split(r.split);
    it.level = parse_level(r.level);
    it.truth = observe(it.visual);
    items.push_back(std::move(it));
  }
  if (items.empty()) throw std::runtime_error("manifest " + manifest_path.string() + " is empty");
  return items;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline void save_parameters(const fs::path& p, std::string_view kind, const Vector& theta, const json& meta = {}) {
  json j;
  j["kind"] = std::string(kind);
  if (!meta.is_null()) j["meta"] = meta;
  j["parameters"] = vector_json(theta);
  write_file(p, j.dump() + '\n');
}

inline Vector load_parameters(const fs::path& p, std::string_view kind) {
  require_file(p, "checkpoint");
  const auto j = json::parse(read_file(p));
  if (j.at("kind").get<std::string>() != kind) {
    throw std::runtime_error(p.string() + ": expected a " + std::string(kind) + " checkpoint");
  }
  return vector_from_json(j.at("parameters"));
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

/// Tab-separated table with a fixed header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw std::logic_error("Table: row width does not match header");
    rows.push_back(std::move(row));
  }

  std::string str() const {
    std::string s;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += '\t';
        s += cells[i];
      }
      s += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return s;
  }
};

}  // namespace cotdub::pipeline
