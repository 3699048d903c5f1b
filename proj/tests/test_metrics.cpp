#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cotdub/metrics.hpp"
#include "oracles.hpp"
#include "toy_tasks.hpp"

using namespace cotdub;

namespace {

CepstralSeq cep(const Matrix& m) { return CepstralSeq{m}; }

bool valid_path(const AlignmentPath& p, Eigen::Index n, Eigen::Index m) {
  if (p.pairs.front() != std::make_pair(Eigen::Index{0}, Eigen::Index{0})) return false;
  if (p.pairs.back() != std::make_pair(n - 1, m - 1)) return false;
  for (std::size_t k = 1; k < p.pairs.size(); ++k) {
    const auto di = p.pairs[k].first - p.pairs[k - 1].first;
    const auto dj = p.pairs[k].second - p.pairs[k - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || di + dj == 0) return false;
  }
  return true;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string w;
  for (char ch : s + " ") {
    if (ch == ' ') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w += ch;
    }
  }
  return out;
}

}  // namespace

TEST(Dtw, IdenticalSequencesAlignOnDiagonal) {
  std::mt19937_64 rng(1);
  const Matrix a = toy::random_matrix(rng, 6, 3);
  const Alignment al = dtw_align(cep(a), cep(a));
  EXPECT_EQ(al.cost, 0.0);
  ASSERT_EQ(al.path.pairs.size(), 6u);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ(al.path.pairs[i], std::make_pair(i, i));
}

TEST(Dtw, SingleFrameVisitsAll) {
  std::mt19937_64 rng(2);
  const Alignment al = dtw_align(cep(toy::random_matrix(rng, 1, 2)), cep(toy::random_matrix(rng, 5, 2)));
  ASSERT_EQ(al.path.pairs.size(), 5u);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(al.path.pairs[j], std::make_pair(Eigen::Index{0}, j));
}

TEST(Dtw, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    const Matrix a = toy::random_matrix(rng, 5, 2);
    const Matrix b = toy::random_matrix(rng, 7, 2);
    const Alignment al = dtw_align(cep(a), cep(b));
    EXPECT_NEAR(al.cost, oracle::brute_force_dtw(a, b), 1e-12);
    EXPECT_TRUE(valid_path(al.path, 5, 7));
    double sum = 0.0;
    for (const auto& [p, q] : al.path.pairs) sum += (a.row(p) - b.row(q)).norm();
    EXPECT_NEAR(sum, al.cost, 1e-12);
  }
}

TEST(Dtw, NoWorseThanDiagonal) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 30; ++i) {
    const Matrix a = toy::random_matrix(rng, 8, 3);
    const Matrix b = toy::random_matrix(rng, 8, 3);
    double diag = 0.0;
    for (Eigen::Index k = 0; k < 8; ++k) diag += (a.row(k) - b.row(k)).norm();
    EXPECT_LE(dtw_align(cep(a), cep(b)).cost, diag + 1e-12);
  }
}

TEST(Dtw, RejectsCoefficientMismatch) {
  EXPECT_THROW(dtw_align(cep(Matrix::Zero(3, 2)), cep(Matrix::Zero(3, 3))), std::invalid_argument);
}

TEST(Mcd, Examples) {
  std::mt19937_64 rng(5);
  const Matrix a = toy::random_matrix(rng, 6, 4);
  EXPECT_EQ(mcd(cep(a), cep(a)), 0.0);
  const Matrix u = (Matrix(1, 3) << 0.0, 1.0, 0.0).finished();
  EXPECT_NEAR(mcd(cep(Matrix::Zero(1, 3)), cep(u)), 6.14186, 1e-5);
  EXPECT_NEAR(mcd(cep(Matrix::Zero(1, 3)), cep(u)), 10.0 * std::sqrt(2.0) / std::log(10.0), 1e-12);
}

TEST(Mcd, SymmetricAndAxisPermutationInvariant) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const Matrix a = toy::random_matrix(rng, 5, 4);
    const Matrix b = toy::random_matrix(rng, 7, 4);
    EXPECT_NEAR(mcd(cep(a), cep(b)), mcd(cep(b), cep(a)), 1e-12);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
    perm.indices() << 2, 0, 3, 1;
    EXPECT_NEAR(mcd(cep(a * perm), cep(b * perm)), mcd(cep(a), cep(b)), 1e-12);
  }
}

TEST(McdSl, LengthPenalty) {
  std::mt19937_64 rng(7);
  const Matrix a = toy::random_matrix(rng, 6, 3);
  const Matrix b = toy::random_matrix(rng, 6, 3);
  EXPECT_EQ(mcd_sl(cep(a), cep(b)), mcd(cep(a), cep(b)));
  Matrix doubled(12, 3);
  for (Eigen::Index i = 0; i < 6; ++i) doubled.row(2 * i) = doubled.row(2 * i + 1) = b.row(i);
  EXPECT_NEAR(mcd_sl(cep(a), cep(doubled)) / mcd(cep(a), cep(doubled)), 2.0, 1e-12);
}

TEST(McdSl, NonDecreasingInLengthGap) {
  // Stretching a constant-content sequence keeps MCD fixed, so the score
  // follows the length ratio.
  const Matrix a = Matrix::Constant(4, 2, 0.5);
  double prev = 0.0;
  for (int extra = 0; extra <= 8; ++extra) {
    const double v = mcd_sl(cep(a), cep(Matrix::Constant(4 + extra, 2, 1.0)));
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Wer, Examples) {
  EXPECT_EQ(wer(words("a b c"), words("a b c")), 0.0);
  EXPECT_NEAR(wer(words("a b c"), words("a x c")), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(wer(words("a"), words("a b c")), 2.0);
  EXPECT_THROW(wer(std::vector<std::string>{}, words("a")), std::invalid_argument);
}

TEST(Wer, MatchesRecursiveEditDistanceAndRelabeling) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> len(1, 6), tok(0, 3);
  for (int i = 0; i < 300; ++i) {
    std::vector<int> r(len(rng)), h(len(rng) - 1);
    for (int& x : r) x = tok(rng);
    for (int& x : h) x = tok(rng);
    const auto counts = edit_counts(r, h);
    EXPECT_EQ(counts.total(), oracle::edit_distance(r, h));
    EXPECT_DOUBLE_EQ(wer(r, h), static_cast<double>(oracle::edit_distance(r, h)) / r.size());
    std::vector<int> r2 = r, h2 = h;
    for (int& x : r2) x = (x * 3 + 1) % 4;
    for (int& x : h2) x = (x * 3 + 1) % 4;
    EXPECT_EQ(wer(r2, h2), wer(r, h));
    EXPECT_EQ(wer(r, r), 0.0);
  }
}

TEST(CosineSim, Examples) {
  const Vector u = (Vector(3) << 1, 2, 3).finished();
  const Vector v = (Vector(3) << 4, 5, 6).finished();
  EXPECT_NEAR(cosine_sim(u, u), 1.0, 1e-15);
  EXPECT_EQ(cosine_sim(Vector::Unit(3, 0), Vector::Unit(3, 1)), 0.0);
  EXPECT_NEAR(cosine_sim(u, v), 0.974632, 1e-6);
  EXPECT_THROW(cosine_sim(u, Vector::Zero(3)), std::invalid_argument);
}

TEST(Cepstra, ConstantFrameHasNoKeptEnergy) {
  const FeatureSeq f(Matrix::Constant(3, 8, 2.5), 0.01);
  const CepstralSeq c = cepstra_from_features(f, 5);
  EXPECT_EQ(c.frames.cols(), 5);
  EXPECT_LT(c.frames.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cepstra, ScalingShiftsOnlyC0) {
  std::mt19937_64 rng(9);
  const Matrix m = toy::random_matrix(rng, 4, 8).array().abs() + 0.1;
  const auto a = cepstra_from_features(FeatureSeq(m, 0.01), 6);
  const auto b = cepstra_from_features(FeatureSeq(3.7 * m, 0.01), 6);
  EXPECT_LT((a.frames - b.frames).norm(), 1e-12);
}

TEST(Cepstra, MatchesDirectDct) {
  std::mt19937_64 rng(10);
  const Matrix m = toy::random_matrix(rng, 3, 9);
  const auto c = cepstra_from_features(FeatureSeq(m, 0.01), 8, FeatureScale::log);
  for (Eigen::Index f = 0; f < 3; ++f) {
    const Vector row = m.row(f).transpose();
    for (int k = 1; k <= 8; ++k) EXPECT_NEAR(c.frames(f, k - 1), oracle::dct2(row, k), 1e-12);
  }
  const Matrix lin = m.array().abs() + 0.2;
  const auto cl = cepstra_from_features(FeatureSeq(lin, 0.01), 4);
  const Vector logrow = lin.row(0).array().log().transpose();
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(cl.frames(0, k - 1), oracle::dct2(logrow, k), 1e-12);
}

TEST(Cepstra, RejectsTooManyCoefficients) {
  const FeatureSeq f(Matrix::Ones(2, 4), 0.01);
  EXPECT_THROW(cepstra_from_features(f, 5), std::invalid_argument);
  EXPECT_THROW(cepstra_from_features(f, 0), std::invalid_argument);
}
