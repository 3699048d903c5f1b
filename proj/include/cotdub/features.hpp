#pragma once

// Frame-major real feature sequences (mel-like or visual), plus their on-disk
// form: one frame per tab-separated row, and a JSON sidecar holding frame_hop
// and the row width.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>

namespace cotdub {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct FeatureSeq {
  Matrix frames;  // F x D
  double frame_hop = 0.01;

  FeatureSeq() = default;
  FeatureSeq(Matrix f, double hop) : frames(std::move(f)), frame_hop(hop) { validate(); }

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
  double duration() const { return static_cast<double>(frames.rows()) * frame_hop; }

  void validate() const {
    if (frames.rows() < 1 || frames.cols() < 1) throw std::invalid_argument("FeatureSeq: needs F >= 1 and D >= 1");
    if (!frames.allFinite()) throw std::invalid_argument("FeatureSeq: entries must be finite");
    if (!(frame_hop > 0.0) || !std::isfinite(frame_hop)) throw std::invalid_argument("FeatureSeq: frame_hop must be > 0");
  }
};

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  auto s = p;
  s += ".json";
  return s;
}

inline void write_features(const std::filesystem::path& path, const FeatureSeq& seq) {
  seq.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index r = 0; r < seq.frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) {
      if (c) out << '\t';
      out << format_double(seq.frames(r, c));
    }
    out << '\n';
  }
  std::ofstream meta(sidecar_path(path), std::ios::binary);
  if (!meta) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  nlohmann::ordered_json j;
  j["frame_hop"] = seq.frame_hop;
  j["dim"] = seq.frames.cols();
  j["frames"] = seq.frames.rows();
  meta << j.dump() << '\n';
}

inline FeatureSeq read_features(const std::filesystem::path& path) {
  std::ifstream meta(sidecar_path(path));
  if (!meta) throw std::runtime_error("missing feature sidecar " + sidecar_path(path).string());
  const auto j = nlohmann::json::parse(meta);
  const double hop = j.at("frame_hop").get<double>();
  const auto dim = j.at("dim").get<Eigen::Index>();

  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<double> values;
  Eigen::Index rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Eigen::Index cols = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) tab = line.size();
      values.push_back(parse_double(std::string_view(line).substr(start, tab - start)));
      ++cols;
      start = tab + 1;
    }
    if (cols != dim) throw std::runtime_error(path.string() + ": row width does not match sidecar dim");
    ++rows;
  }
  Matrix m(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) m(r, c) = values[static_cast<std::size_t>(r * dim + c)];
  }
  return FeatureSeq(std::move(m), hop);
}

}  // namespace cotdub
