#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "anatomy/error.hpp"
#include "anatomy/rng.hpp"
#include "anatomy/spectral.hpp"

using namespace anatomy;
using namespace anatomy::spectral;

namespace {

EmbeddingMatrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m(r, c);
  for (auto& v : m.values) v = static_cast<float>(rng.normal());
  return m;
}

// Singular values from the eigenvalues of the Gram matrix, via Eigen.
std::vector<double> gram_oracle(const std::vector<double>& a, std::size_t r, std::size_t c) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(a.data(), r, c);
  Eigen::MatrixXd G = r >= c ? Eigen::MatrixXd(A.transpose() * A) : Eigen::MatrixXd(A * A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  std::vector<double> s;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()[i])));
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

}  // namespace

TEST(Svd, MatchesGramEigenOracle) {
  const std::pair<std::size_t, std::size_t> shapes[] = {{1, 1}, {1, 7}, {9, 1}, {5, 5}, {40, 12},
                                                        {12, 40}, {64, 64}, {200, 30}};
  std::uint64_t seed = 1;
  for (auto [r, c] : shapes) {
    auto m = gaussian(r, c, seed++);
    std::vector<double> a(m.values.begin(), m.values.end());
    auto got = svd(a, r, c).sigma;
    auto want = gram_oracle(a, r, c);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-6 * want[i] + 1e-12) << r << "x" << c << " i=" << i;
    }
  }
}

TEST(Svd, FactorsReconstructAndAreOrthonormal) {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{30, 8}, {8, 30}, {16, 16}}) {
    auto m = gaussian(r, c, 77 + r);
    std::vector<double> a(m.values.begin(), m.values.end());
    auto s = svd(a, r, c, true);
    const std::size_t k = std::min(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double v = 0;
        for (std::size_t t = 0; t < k; ++t) v += s.u[i * k + t] * s.sigma[t] * s.v[j * k + t];
        EXPECT_NEAR(v, a[i * c + j], 1e-10);
      }
    }
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) {
        double uu = 0, vv = 0;
        for (std::size_t i = 0; i < r; ++i) uu += s.u[i * k + p] * s.u[i * k + q];
        for (std::size_t j = 0; j < c; ++j) vv += s.v[j * k + p] * s.v[j * k + q];
        EXPECT_NEAR(uu, p == q ? 1.0 : 0.0, 1e-10);
        EXPECT_NEAR(vv, p == q ? 1.0 : 0.0, 1e-10);
      }
    }
  }
}

TEST(Svd, RejectsBadInput) {
  std::vector<double> a{1.0, NAN};
  EXPECT_THROW(svd(a, 1, 2), ValidationError);
  EXPECT_THROW(svd(a, 3, 2), ValidationError);
}

TEST(Spectrum, GramAndDirectPathsAgree) {
  auto m = gaussian(300, 20, 5);
  auto d = singular_values(m, true, SvdPath::kDirect);
  auto g = singular_values(m, true, SvdPath::kGram);
  for (std::size_t i = 0; i < d.singular_values.size(); ++i) {
    EXPECT_NEAR(d.singular_values[i], g.singular_values[i], 1e-8 * d.singular_values[0]);
  }
}

TEST(Spectrum, CenteringRemovesColumnMeans) {
  EmbeddingMatrix m(4, 2, {1, 5, 1, 5, 1, 5, 1, 5});
  auto raw = singular_values(m, false);
  auto cen = singular_values(m, true);
  EXPECT_EQ(raw.numeric_rank, 1u);
  EXPECT_EQ(cen.numeric_rank, 0u);
}

TEST(EffectiveRank, TrivialSpectra) {
  for (std::size_t n : {1, 2, 3, 7, 10, 64, 512}) {
    auto uniform = spectrum_from_values(std::vector<double>(n, 2.5));
    EXPECT_EQ(uniform.effective_rank, static_cast<double>(n));
    EXPECT_EQ(uniform.effective_rank_variance, static_cast<double>(n));
  }
  std::vector<double> single(16, 0.0);
  single[3] = 4.0;
  auto one = spectrum_from_values(single);
  EXPECT_EQ(one.effective_rank, 1.0);
  EXPECT_EQ(one.numeric_rank, 1u);
  EXPECT_THROW(effective_rank(spectrum_from_values(std::vector<double>(4, 0.0))), ValidationError);
}

TEST(EffectiveRank, ScaleAndPermutationInvariant) {
  auto m = gaussian(50, 12, 8);
  auto base = singular_values(m, true);
  EmbeddingMatrix scaled = m;
  for (auto& v : scaled.values) v *= 8.0f;  // exact in binary
  auto s = singular_values(scaled, true);
  EXPECT_NEAR(s.effective_rank, base.effective_rank, 1e-12 * base.effective_rank);

  // Reverse rows and rotate columns.
  EmbeddingMatrix perm(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) perm(m.rows - 1 - r, (c + 5) % m.cols) = m(r, c);
  }
  auto p = singular_values(perm, true);
  EXPECT_NEAR(p.effective_rank, base.effective_rank, 1e-10);
  EXPECT_EQ(p.dims_at, base.dims_at);
}

TEST(EffectiveRank, VarianceDims) {
  auto rep = spectrum_from_values({3.0, 2.0, 1.0});  // variances 9, 4, 1 of 14
  EXPECT_EQ(variance_dims(rep, 0.5), 1u);
  EXPECT_EQ(variance_dims(rep, 0.9), 2u);
  EXPECT_EQ(variance_dims(rep, 1.0), 3u);
  EXPECT_THROW(variance_dims(rep, 0.0), InvalidArgument);
  EXPECT_THROW(variance_dims(rep, 1.5), InvalidArgument);
}

TEST(EffectiveRank, TinyValuesClamped) {
  auto rep = spectrum_from_values({1.0, 1e-12, 0.5});
  EXPECT_EQ(rep.singular_values, (std::vector<double>{1.0, 0.5, 0.0}));
  EXPECT_EQ(rep.numeric_rank, 2u);
}

TEST(PositionalSimilarity, MatchesNaiveOracle) {
  Rng rng(21);
  const std::size_t n = 16, d = 24, split = 8;
  EmbeddingMatrix p(n, d);
  std::vector<float> base(d);
  for (auto& b : base) b = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      p(i, k) = static_cast<float>(i < split ? rng.normal() : base[k] + 0.1 * rng.normal());
    }
  }
  auto rep = positional_similarity(p, split);

  auto cos = [&](std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += static_cast<double>(p(i, k)) * p(j, k);
      ni += static_cast<double>(p(i, k)) * p(i, k);
      nj += static_cast<double>(p(j, k)) * p(j, k);
    }
    return std::clamp(dot / (std::sqrt(ni) * std::sqrt(nj)), -1.0, 1.0);
  };
  double early = 0, late = 0;
  std::size_t ne = 0, nl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      EXPECT_EQ(rep.matrix[i * n + j], cos(i, j));
      if (i < split && j < split) early += cos(i, j), ++ne;
      if (i >= split && j >= split) late += cos(i, j), ++nl;
    }
  }
  EXPECT_EQ(rep.within_early, early / static_cast<double>(ne));
  EXPECT_EQ(rep.within_late, late / static_cast<double>(nl));
  EXPECT_TRUE(rep.ratio_defined);
  EXPECT_EQ(rep.ratio, rep.within_late / rep.within_early);
  EXPECT_GT(rep.within_late, 0.9);
  EXPECT_LT(std::abs(rep.within_early), 0.5);
}

TEST(PositionalSimilarity, Errors) {
  EmbeddingMatrix p(4, 2, {1, 0, 0, 1, 0, 0, 1, 1});
  EXPECT_THROW(positional_similarity(p, 2), ValidationError);
  EmbeddingMatrix q(4, 2, {1, 0, 0, 1, 1, 1, 1, 1});
  EXPECT_THROW(positional_similarity(q, 0), InvalidArgument);
  EXPECT_THROW(positional_similarity(q, 4), InvalidArgument);
  // One-row groups have no off-diagonal pairs.
  EXPECT_FALSE(positional_similarity(q, 1).ratio_defined);
}
