#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "anatomy/matrix.hpp"

namespace anatomy::spectral {

// Thin SVD of a dense row-major double matrix, A = U diag(sigma) V^T.
// U is rows x r and V is cols x r (both row-major), r = min(rows, cols).
struct SvdResult {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> sigma;  // descending
  std::vector<double> u;      // empty unless factors were requested
  std::vector<double> v;
};

// Householder bidiagonalization followed by implicit-shift QR on the
// bidiagonal (Golub-Kahan-Reinsch).
SvdResult svd(std::span<const double> a, std::size_t rows, std::size_t cols,
              bool want_factors = false);

enum class SvdPath {
  kAuto,    // Gram route when rows > 4 * cols, direct otherwise
  kDirect,  // bidiagonalize the (centered) matrix itself
  kGram,    // singular values as square roots of the spectrum of M^T M
};

enum class EntropyBasis {
  kSingularValues,  // p_i = sigma_i / sum sigma
  kVariance,        // p_i = sigma_i^2 / sum sigma^2
};

inline constexpr double kClampRatio = 1e-10;

struct SpectrumReport {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool centered = false;
  std::vector<double> singular_values;  // non-increasing, tiny values clamped to 0
  std::size_t numeric_rank = 0;
  double effective_rank = 0.0;           // entropy over sigma
  double effective_rank_variance = 0.0;  // entropy over sigma^2
  std::map<double, std::size_t> dims_at;  // variance threshold -> dimension count
};

SpectrumReport singular_values(const EmbeddingMatrix& m, bool center,
                               SvdPath path = SvdPath::kAuto);

// Builds a report from an explicit spectrum (sorted and clamped here).
SpectrumReport spectrum_from_values(std::vector<double> sigma);

double effective_rank(const SpectrumReport& report,
                      EntropyBasis basis = EntropyBasis::kSingularValues);
std::size_t variance_dims(const SpectrumReport& report, double threshold);

struct SimilarityReport {
  std::size_t rows = 0;
  std::size_t split = 0;
  std::vector<double> matrix;  // rows x rows cosine similarities
  double within_early = 0.0;
  double within_late = 0.0;
  double ratio = 0.0;
  bool ratio_defined = false;  // false when ratio is NaN
};

SimilarityReport positional_similarity(const EmbeddingMatrix& p, std::size_t split);

// Column-mean-centered copy of m in double precision.
std::vector<double> centered_copy(const EmbeddingMatrix& m, bool center);

}  // namespace anatomy::spectral
