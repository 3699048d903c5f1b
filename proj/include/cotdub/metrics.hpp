#pragma once

// Objective metrics: DTW-aligned mel-cepstral distortion, its length-penalized
// variant, word error rate and cosine similarity.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cotdub/features.hpp"

namespace cotdub {

/// Mel-cepstral coefficients per frame (c0 already dropped).
struct CepstralSeq {
  Matrix frames;  // F x K

  Eigen::Index num_frames() const { return frames.rows(); }

  void validate() const {
    if (frames.rows() < 1 || frames.cols() < 1) throw std::invalid_argument("CepstralSeq: needs F >= 1 and K >= 1");
  }
};

struct AlignmentPath {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
};

struct Alignment {
  AlignmentPath path;
  double cost = 0.0;
};

/// 10 sqrt(2) / ln 10
inline const double kMcdConstant = 10.0 * std::numbers::sqrt2 / std::numbers::ln10;

/// DTW under steps (1,0), (0,1), (1,1) minimizing the summed Euclidean frame
/// distance. Ties prefer the diagonal, then advancing `a`.
inline Alignment dtw_align(const CepstralSeq& a, const CepstralSeq& b) {
  a.validate();
  b.validate();
  if (a.frames.cols() != b.frames.cols()) throw std::invalid_argument("dtw_align: coefficient count mismatch");
  const Eigen::Index n = a.frames.rows();
  const Eigen::Index m = b.frames.rows();
  Matrix dist(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) dist(i, j) = (a.frames.row(i) - b.frames.row(j)).norm();
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  Matrix acc = Matrix::Constant(n, m, inf);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double best = (i == 0 && j == 0) ? 0.0 : inf;
      if (i > 0 && j > 0) best = std::min(best, acc(i - 1, j - 1));
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = best + dist(i, j);
    }
  }
  Alignment out;
  Eigen::Index i = n - 1;
  Eigen::Index j = m - 1;
  out.path.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && acc(i - 1, j - 1) <= acc(i - 1, j) && acc(i - 1, j - 1) <= acc(i, j - 1)) {
      --i;
      --j;
    } else if (i > 0 && (j == 0 || acc(i - 1, j) <= acc(i, j - 1))) {
      --i;
    } else {
      --j;
    }
    out.path.pairs.emplace_back(i, j);
  }
  std::reverse(out.path.pairs.begin(), out.path.pairs.end());
  for (const auto& [pi, pj] : out.path.pairs) out.cost += dist(pi, pj);
  return out;
}

/// Mean DTW-aligned frame distance, in dB.
inline double mcd(const CepstralSeq& a, const CepstralSeq& b) {
  const Alignment al = dtw_align(a, b);
  return kMcdConstant * al.cost / static_cast<double>(al.path.pairs.size());
}

/// MCD scaled by the max/min frame-count ratio.
inline double mcd_sl(const CepstralSeq& a, const CepstralSeq& b) {
  const double fa = static_cast<double>(a.num_frames());
  const double fb = static_cast<double>(b.num_frames());
  return mcd(a, b) * (std::max(fa, fb) / std::min(fa, fb));
}

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t total() const { return substitutions + insertions + deletions; }
};

/// Minimal edit script between token sequences (Levenshtein, unit costs).
template <class T>
EditCounts edit_counts(const std::vector<T>& ref, const std::vector<T>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  // cost[i][j] for ref prefix i, hyp prefix j
  std::vector<std::vector<std::size_t>> cost(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }
  EditCounts out;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

/// (S + I + D) / |ref|; may exceed 1.
template <class T>
double wer(const std::vector<T>& ref, const std::vector<T>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: reference must be non-empty");
  return static_cast<double>(edit_counts(ref, hyp).total()) / static_cast<double>(ref.size());
}

inline double cosine_sim(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: size mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_sim: zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

enum class FeatureScale { linear, log };

/// Orthonormal DCT-II rows 1..K for a length-D input (row k-1 holds c_k).
inline Matrix dct2_basis(Eigen::Index dim, Eigen::Index num_coeffs) {
  Matrix basis(num_coeffs, dim);
  const double scale = std::sqrt(2.0 / static_cast<double>(dim));
  for (Eigen::Index k = 1; k <= num_coeffs; ++k) {
    for (Eigen::Index n = 0; n < dim; ++n) {
      basis(k - 1, n) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(n) + 1.0) /
                                         (2.0 * static_cast<double>(dim)));
    }
  }
  return basis;
}

/// Per-frame DCT-II of log-compressed features, keeping c1..cK. With
/// FeatureScale::log the features are taken as already log-compressed.
inline CepstralSeq cepstra_from_features(const FeatureSeq& mel, Eigen::Index num_coeffs,
                                         FeatureScale scale = FeatureScale::linear) {
  mel.validate();
  const Eigen::Index dim = mel.dim();
  if (num_coeffs < 1 || num_coeffs >= dim) {
    throw std::invalid_argument("cepstra_from_features: need 1 <= K < D (c0 is dropped), got K=" +
                                std::to_string(num_coeffs) + ", D=" + std::to_string(dim));
  }
  Matrix logmel = mel.frames;
  if (scale == FeatureScale::linear) {
    logmel = mel.frames.array().max(1e-10).log().matrix();
  }
  return CepstralSeq{logmel * dct2_basis(dim, num_coeffs).transpose()};
}

}  // namespace cotdub
