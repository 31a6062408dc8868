#include "anatomy/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "anatomy/error.hpp"
#include "anatomy/parallel.hpp"

namespace anatomy::spectral {
namespace {

constexpr int kMaxSweeps = 75;

double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

// Golub-Kahan-Reinsch on a tall (m >= n) row-major matrix held in `a`, which
// is overwritten with U when factors are requested. w receives the singular
// values (unsorted), v the n x n right factor.
void gkr(std::vector<double>& a, std::size_t m_sz, std::size_t n_sz, std::vector<double>& w,
         std::vector<double>& v, bool want_factors) {
  const auto m = static_cast<std::ptrdiff_t>(m_sz);
  const auto n = static_cast<std::ptrdiff_t>(n_sz);
  auto U = [&](std::ptrdiff_t r, std::ptrdiff_t c) -> double& { return a[r * n + c]; };
  auto V = [&](std::ptrdiff_t r, std::ptrdiff_t c) -> double& { return v[r * n + c]; };

  w.assign(n_sz, 0.0);
  if (want_factors) v.assign(n_sz * n_sz, 0.0);
  std::vector<double> rv1(n_sz, 0.0);
  const double eps = std::numeric_limits<double>::epsilon();

  double g = 0.0, scale = 0.0, anorm = 0.0;
  std::ptrdiff_t l = 0;

  // Householder reduction to upper bidiagonal form.
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    l = i + 1;
    rv1[i] = scale * g;
    g = scale = 0.0;
    double s = 0.0;
    if (i < m) {
      for (std::ptrdiff_t k = i; k < m; ++k) scale += std::fabs(U(k, i));
      if (scale != 0.0) {
        for (std::ptrdiff_t k = i; k < m; ++k) {
          U(k, i) /= scale;
          s += U(k, i) * U(k, i);
        }
        double f = U(i, i);
        g = -sign_of(std::sqrt(s), f);
        double h = f * g - s;
        U(i, i) = f - g;
        std::vector<double> acc(n_sz, 0.0);
        for (std::ptrdiff_t k = i; k < m; ++k) {
          const double uk = U(k, i);
          const double* row = &a[k * n];
          for (std::ptrdiff_t j = l; j < n; ++j) acc[j] += uk * row[j];
        }
        for (std::ptrdiff_t j = l; j < n; ++j) acc[j] /= h;
        for (std::ptrdiff_t k = i; k < m; ++k) {
          const double uk = U(k, i);
          double* row = &a[k * n];
          for (std::ptrdiff_t j = l; j < n; ++j) row[j] += acc[j] * uk;
        }
        for (std::ptrdiff_t k = i; k < m; ++k) U(k, i) *= scale;
      }
    }
    w[i] = scale * g;
    g = s = scale = 0.0;
    if (i < m && i != n - 1) {
      for (std::ptrdiff_t k = l; k < n; ++k) scale += std::fabs(U(i, k));
      if (scale != 0.0) {
        for (std::ptrdiff_t k = l; k < n; ++k) {
          U(i, k) /= scale;
          s += U(i, k) * U(i, k);
        }
        double f = U(i, l);
        g = -sign_of(std::sqrt(s), f);
        double h = f * g - s;
        U(i, l) = f - g;
        for (std::ptrdiff_t k = l; k < n; ++k) rv1[k] = U(i, k) / h;
        const double* ui = &a[i * n];
        for (std::ptrdiff_t j = l; j < m; ++j) {
          double* row = &a[j * n];
          double dot = 0.0;
          for (std::ptrdiff_t k = l; k < n; ++k) dot += row[k] * ui[k];
          for (std::ptrdiff_t k = l; k < n; ++k) row[k] += dot * rv1[k];
        }
        for (std::ptrdiff_t k = l; k < n; ++k) U(i, k) *= scale;
      }
    }
    anorm = std::max(anorm, std::fabs(w[i]) + std::fabs(rv1[i]));
  }

  if (want_factors) {
    // Right-hand transformations.
    for (std::ptrdiff_t i = n - 1; i >= 0; --i) {
      if (i < n - 1) {
        if (g != 0.0) {
          for (std::ptrdiff_t j = l; j < n; ++j) V(j, i) = (U(i, j) / U(i, l)) / g;
          for (std::ptrdiff_t j = l; j < n; ++j) {
            double s = 0.0;
            for (std::ptrdiff_t k = l; k < n; ++k) s += U(i, k) * V(k, j);
            for (std::ptrdiff_t k = l; k < n; ++k) V(k, j) += s * V(k, i);
          }
        }
        for (std::ptrdiff_t j = l; j < n; ++j) V(i, j) = V(j, i) = 0.0;
      }
      V(i, i) = 1.0;
      g = rv1[i];
      l = i;
    }
    // Left-hand transformations.
    for (std::ptrdiff_t i = std::min(m, n) - 1; i >= 0; --i) {
      l = i + 1;
      g = w[i];
      for (std::ptrdiff_t j = l; j < n; ++j) U(i, j) = 0.0;
      if (g != 0.0) {
        g = 1.0 / g;
        for (std::ptrdiff_t j = l; j < n; ++j) {
          double s = 0.0;
          for (std::ptrdiff_t k = l; k < m; ++k) s += U(k, i) * U(k, j);
          double f = (s / U(i, i)) * g;
          for (std::ptrdiff_t k = i; k < m; ++k) U(k, j) += f * U(k, i);
        }
        for (std::ptrdiff_t j = i; j < m; ++j) U(j, i) *= g;
      } else {
        for (std::ptrdiff_t j = i; j < m; ++j) U(j, i) = 0.0;
      }
      U(i, i) += 1.0;
    }
  }

  // Implicit-shift QR on the bidiagonal.
  for (std::ptrdiff_t k = n - 1; k >= 0; --k) {
    for (int its = 0;; ++its) {
      bool flag = true;
      std::ptrdiff_t nm = 0;
      for (l = k; l >= 0; --l) {
        nm = l - 1;
        if (l == 0 || std::fabs(rv1[l]) <= eps * anorm) {
          flag = false;
          break;
        }
        if (std::fabs(w[nm]) <= eps * anorm) break;
      }
      if (flag) {
        double c = 0.0, s = 1.0;
        for (std::ptrdiff_t i = l; i <= k; ++i) {
          double f = s * rv1[i];
          rv1[i] = c * rv1[i];
          if (std::fabs(f) <= eps * anorm) break;
          g = w[i];
          double h = std::hypot(f, g);
          w[i] = h;
          h = 1.0 / h;
          c = g * h;
          s = -f * h;
          if (want_factors) {
            for (std::ptrdiff_t j = 0; j < m; ++j) {
              double y = U(j, nm), z = U(j, i);
              U(j, nm) = y * c + z * s;
              U(j, i) = z * c - y * s;
            }
          }
        }
      }
      double z = w[k];
      if (l == k) {
        if (z < 0.0) {
          w[k] = -z;
          if (want_factors) {
            for (std::ptrdiff_t j = 0; j < n; ++j) V(j, k) = -V(j, k);
          }
        }
        break;
      }
      if (its == kMaxSweeps) {
        throw NumericError("SVD: no convergence after " + std::to_string(kMaxSweeps) +
                           " QR sweeps");
      }
      double x = w[l];
      nm = k - 1;
      double y = w[nm];
      g = rv1[nm];
      double h = rv1[k];
      double f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y);
      g = std::hypot(f, 1.0);
      f = ((x - z) * (x + z) + h * ((y / (f + sign_of(g, f))) - h)) / x;
      double c = 1.0, s = 1.0;
      for (std::ptrdiff_t j = l; j <= nm; ++j) {
        std::ptrdiff_t i = j + 1;
        g = rv1[i];
        y = w[i];
        h = s * g;
        g = c * g;
        z = std::hypot(f, h);
        rv1[j] = z;
        c = f / z;
        s = h / z;
        f = x * c + g * s;
        g = g * c - x * s;
        h = y * s;
        y *= c;
        if (want_factors) {
          for (std::ptrdiff_t jj = 0; jj < n; ++jj) {
            double xv = V(jj, j), zv = V(jj, i);
            V(jj, j) = xv * c + zv * s;
            V(jj, i) = zv * c - xv * s;
          }
        }
        z = std::hypot(f, h);
        w[j] = z;
        if (z != 0.0) {
          z = 1.0 / z;
          c = f * z;
          s = h * z;
        }
        f = c * g + s * y;
        x = c * y - s * g;
        if (want_factors) {
          for (std::ptrdiff_t jj = 0; jj < m; ++jj) {
            double yu = U(jj, j), zu = U(jj, i);
            U(jj, j) = yu * c + zu * s;
            U(jj, i) = zu * c - yu * s;
          }
        }
      }
      rv1[l] = 0.0;
      rv1[k] = f;
      w[k] = x;
    }
  }
}

// Upper triangle of M^T M accumulated row by row; each worker owns a band of
// output rows so the summation order is fixed.
std::vector<double> gram(const std::vector<double>& a, std::size_t rows, std::size_t cols) {
  std::vector<double> g(cols * cols, 0.0);
  parallel_for(cols, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = &a[r * cols];
      for (std::size_t i = begin; i < end; ++i) {
        const double ri = row[i];
        double* out = &g[i * cols];
        for (std::size_t j = i; j < cols; ++j) out[j] += ri * row[j];
      }
    }
  });
  for (std::size_t i = 0; i < cols; ++i) {
    for (std::size_t j = 0; j < i; ++j) g[i * cols + j] = g[j * cols + i];
  }
  return g;
}

}  // namespace

SvdResult svd(std::span<const double> a, std::size_t rows, std::size_t cols, bool want_factors) {
  if (rows == 0 || cols == 0 || a.size() != rows * cols) {
    throw ValidationError("svd: shape does not match data");
  }
  for (double x : a) {
    if (!std::isfinite(x)) throw ValidationError("svd: non-finite input");
  }

  const bool transpose = rows < cols;
  const std::size_t m = transpose ? cols : rows;
  const std::size_t n = transpose ? rows : cols;
  std::vector<double> work(m * n);
  if (transpose) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) work[c * rows + r] = a[r * cols + c];
    }
  } else {
    std::copy(a.begin(), a.end(), work.begin());
  }

  std::vector<double> w, v;
  gkr(work, m, n, w, v, want_factors);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return w[x] > w[y]; });

  SvdResult out;
  out.rows = rows;
  out.cols = cols;
  out.sigma.reserve(n);
  for (auto idx : order) out.sigma.push_back(w[idx]);
  if (want_factors) {
    // work holds the m x n left factor, v the n x n right factor of the
    // (possibly transposed) problem.
    std::vector<double> left(m * n), right(n * n);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < m; ++r) left[r * n + k] = work[r * n + order[k]];
      for (std::size_t r = 0; r < n; ++r) right[r * n + k] = v[r * n + order[k]];
    }
    if (transpose) {
      out.u = std::move(right);
      out.v = std::move(left);
    } else {
      out.u = std::move(left);
      out.v = std::move(right);
    }
  }
  return out;
}

std::vector<double> centered_copy(const EmbeddingMatrix& m, bool center) {
  std::vector<double> a(m.values.begin(), m.values.end());
  if (!center) return a;
  std::vector<double> mean(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) mean[c] += a[r * m.cols + c];
  }
  for (auto& x : mean) x /= static_cast<double>(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) a[r * m.cols + c] -= mean[c];
  }
  return a;
}

SpectrumReport spectrum_from_values(std::vector<double> sigma) {
  for (double s : sigma) {
    if (!std::isfinite(s) || s < 0.0) throw ValidationError("spectrum must be finite and non-negative");
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  SpectrumReport rep;
  const double floor = sigma.empty() ? 0.0 : kClampRatio * sigma.front();
  for (auto& s : sigma) {
    if (s < floor || s == 0.0) s = 0.0;
  }
  rep.numeric_rank = static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; }));
  rep.singular_values = std::move(sigma);
  if (rep.numeric_rank > 0) {
    rep.effective_rank = effective_rank(rep, EntropyBasis::kSingularValues);
    rep.effective_rank_variance = effective_rank(rep, EntropyBasis::kVariance);
    for (double theta : {0.90, 0.95}) rep.dims_at[theta] = variance_dims(rep, theta);
  }
  return rep;
}

SpectrumReport singular_values(const EmbeddingMatrix& m, bool center, SvdPath path) {
  m.validate();
  if (center && m.rows < 2) throw ValidationError("centering needs at least two rows");

  auto a = centered_copy(m, center);
  if (path == SvdPath::kAuto) path = m.rows > 4 * m.cols ? SvdPath::kGram : SvdPath::kDirect;

  std::vector<double> sigma;
  if (path == SvdPath::kGram) {
    auto g = gram(a, m.rows, m.cols);
    sigma = svd(g, m.cols, m.cols).sigma;
    // The Gram spectrum is the squared singular spectrum; rounding can push
    // the tail slightly negative in exact arithmetic terms, never in sign here.
    for (auto& s : sigma) s = std::sqrt(std::max(s, 0.0));
    if (m.rows < m.cols) sigma.resize(m.rows);
  } else {
    sigma = svd(a, m.rows, m.cols).sigma;
  }

  auto rep = spectrum_from_values(std::move(sigma));
  rep.rows = m.rows;
  rep.cols = m.cols;
  rep.centered = center;
  return rep;
}

double effective_rank(const SpectrumReport& report, EntropyBasis basis) {
  double total = 0.0;
  for (double s : report.singular_values) {
    total += basis == EntropyBasis::kVariance ? s * s : s;
  }
  if (!(total > 0.0)) throw ValidationError("effective rank of an all-zero spectrum is undefined");
  // A flat spectrum over k modes has entropy log k; return k itself rather
  // than a rounded exp(log k).
  std::size_t support = 0;
  bool flat = true;
  for (double s : report.singular_values) {
    if (s <= 0.0) continue;
    flat = flat && s == report.singular_values.front();
    ++support;
  }
  if (flat) return static_cast<double>(support);
  double entropy = 0.0;
  for (double s : report.singular_values) {
    if (s <= 0.0) continue;
    const double p = (basis == EntropyBasis::kVariance ? s * s : s) / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

std::size_t variance_dims(const SpectrumReport& report, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw InvalidArgument("variance threshold must lie in (0, 1], got " + std::to_string(threshold));
  }
  double total = 0.0;
  for (double s : report.singular_values) total += s * s;
  if (!(total > 0.0)) throw ValidationError("variance dims of an all-zero spectrum are undefined");

  const double target = threshold * total;
  double running = 0.0;
  for (std::size_t k = 0; k < report.singular_values.size(); ++k) {
    running += report.singular_values[k] * report.singular_values[k];
    if (running >= target) return k + 1;
  }
  // Rounding can leave the full sum a hair below threshold * total.
  return report.numeric_rank;
}

SimilarityReport positional_similarity(const EmbeddingMatrix& p, std::size_t split) {
  p.validate();
  if (split < 1 || split >= p.rows) {
    throw InvalidArgument("split must satisfy 1 <= split < rows (" + std::to_string(p.rows) +
                          "), got " + std::to_string(split));
  }
  const std::size_t n = p.rows;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (float x : p.row(i)) ss += static_cast<double>(x) * x;
    norms[i] = std::sqrt(ss);
    if (norms[i] == 0.0) throw ValidationError("row " + std::to_string(i) + " has zero norm");
  }

  SimilarityReport rep;
  rep.rows = n;
  rep.split = split;
  rep.matrix.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    rep.matrix[i * n + i] = 1.0;
    auto ri = p.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      auto rj = p.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < p.cols; ++k) dot += static_cast<double>(ri[k]) * rj[k];
      double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      rep.matrix[i * n + j] = c;
      rep.matrix[j * n + i] = c;
    }
  }

  auto group_mean = [&](std::size_t lo, std::size_t hi) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = lo; j < hi; ++j) {
        if (i == j) continue;
        sum += rep.matrix[i * n + j];
        ++count;
      }
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
  };
  rep.within_early = group_mean(0, split);
  rep.within_late = group_mean(split, n);
  rep.ratio = rep.within_late / rep.within_early;
  rep.ratio_defined = std::isfinite(rep.ratio);
  if (!rep.ratio_defined) rep.ratio = std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace anatomy::spectral
