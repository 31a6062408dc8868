#include "anatomy/intrinsic_dim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string_view>
#include <unordered_set>

#include "anatomy/error.hpp"
#include "anatomy/parallel.hpp"
#include "anatomy/rng.hpp"

namespace anatomy::idim {
namespace {

constexpr std::size_t kMinTwoNnPoints = 10;

}  // namespace

DedupResult dedup_points(const PointCloud& cloud) {
  cloud.validate();
  DedupResult out;
  out.cloud.cols = cloud.cols;
  std::vector<float> canon(cloud.values);
  for (auto& v : canon) {
    if (v == 0.0f) v = 0.0f;  // fold -0 onto +0
  }
  const std::size_t row_bytes = cloud.cols * sizeof(float);
  std::unordered_set<std::string_view> seen;
  seen.reserve(cloud.rows);
  for (std::size_t r = 0; r < cloud.rows; ++r) {
    std::string_view key(reinterpret_cast<const char*>(canon.data() + r * cloud.cols), row_bytes);
    if (!seen.insert(key).second) {
      ++out.removed;
      continue;
    }
    auto row = cloud.row(r);
    out.cloud.values.insert(out.cloud.values.end(), row.begin(), row.end());
    ++out.cloud.rows;
  }
  return out;
}

PointCloud sample_points(const PointCloud& cloud, std::size_t count, std::uint64_t seed) {
  if (cloud.rows <= count) return cloud;
  std::vector<std::size_t> idx(cloud.rows);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(cloud.rows - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  PointCloud out(count, cloud.cols);
  for (std::size_t i = 0; i < count; ++i) {
    auto row = cloud.row(idx[i]);
    std::copy(row.begin(), row.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * cloud.cols));
  }
  return out;
}

NeighborTable knn_distances(const PointCloud& cloud, std::size_t k) {
  cloud.validate();
  const std::size_t n = cloud.rows;
  const std::size_t d = cloud.cols;
  if (k == 0 || k >= n) {
    throw InvalidArgument("neighbor count k=" + std::to_string(k) + " must satisfy 1 <= k < n=" +
                          std::to_string(n));
  }

  std::vector<double> pts(cloud.values.begin(), cloud.values.end());
  NeighborTable nn;
  nn.n = n;
  nn.k = k;
  nn.dist.resize(n * k);

  parallel_for(n, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<double> sq(n - 1);
    for (std::size_t i = begin; i < end; ++i) {
      const double* pi = &pts[i * d];
      std::size_t w = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double* pj = &pts[j * d];
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = pi[c] - pj[c];
          s += diff * diff;
        }
        sq[w++] = s;
      }
      std::partial_sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(k), sq.end());
      if (sq[0] == 0.0) {
        throw std::logic_error("knn: point " + std::to_string(i) +
                               " has a duplicate; deduplicate before searching");
      }
      for (std::size_t j = 0; j < k; ++j) nn.dist[i * k + j] = std::sqrt(sq[j]);
    }
  });
  return nn;
}

IdEstimate twonn_from_neighbors(const NeighborTable& nn, double discard_fraction, TwoNnFit fit) {
  if (!(discard_fraction >= 0.0 && discard_fraction < 0.5)) {
    throw InvalidArgument("discard fraction must lie in [0, 0.5), got " +
                          std::to_string(discard_fraction));
  }
  if (nn.n < kMinTwoNnPoints) {
    throw ValidationError("twonn needs n >= 10 points, got " + std::to_string(nn.n));
  }
  if (nn.k < 2) throw InvalidArgument("twonn needs the two nearest neighbors");

  std::vector<double> mu(nn.n);
  for (std::size_t i = 0; i < nn.n; ++i) {
    auto r = nn.of(i);
    if (r[0] == 0.0) throw ValidationError("twonn: zero nearest-neighbor distance");
    mu[i] = r[1] / r[0];
  }
  std::sort(mu.begin(), mu.end());

  const auto n = nn.n;
  const auto dropped = static_cast<std::size_t>(std::floor(static_cast<double>(n) * discard_fraction));
  const std::size_t used = n - dropped;

  IdEstimate est;
  est.method = "twonn";
  est.discard_fraction = discard_fraction;
  est.n_points = n;
  est.n_used = used;

  if (fit == TwoNnFit::kClosedForm) {
    double sum_log = 0.0;
    for (std::size_t i = 0; i < used; ++i) sum_log += std::log(mu[i]);
    est.value = static_cast<double>(used) / sum_log;
  } else {
    // Empirical CDF over the full sorted sample, rank / (n + 1); the largest
    // ratios are then left out of the fit.
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < used; ++i) {
      const double x = std::log(mu[i]);
      const double f = static_cast<double>(i + 1) / static_cast<double>(n + 1);
      const double y = -std::log1p(-f);
      sxx += x * x;
      sxy += x * y;
    }
    est.value = sxy / sxx;
  }
  if (!(std::isfinite(est.value) && est.value > 0.0)) {
    throw NumericError("twonn: degenerate neighbor ratios");
  }
  return est;
}

IdEstimate mle_from_neighbors(const NeighborTable& nn, std::span<const std::size_t> ks) {
  if (ks.empty()) throw InvalidArgument("mle needs at least one neighbor count");
  for (auto k : ks) {
    if (k <= 1) throw InvalidArgument("mle neighbor counts must exceed 1, got " + std::to_string(k));
    if (k > nn.k) {
      throw InvalidArgument("neighbor table holds " + std::to_string(nn.k) +
                            " neighbors, k=" + std::to_string(k) + " requested");
    }
  }

  IdEstimate est;
  est.method = "mle";
  est.n_points = nn.n;
  est.n_used = nn.n;
  double total = 0.0;
  for (auto k : ks) {
    // Averages the inverse local estimates, then inverts once.
    double inv_sum = 0.0;
    for (std::size_t i = 0; i < nn.n; ++i) {
      auto t = nn.of(i);
      const double tk = t[k - 1];
      double s = 0.0;
      for (std::size_t j = 0; j + 1 < k; ++j) {
        if (t[j] == 0.0) throw ValidationError("mle: zero neighbor distance");
        s += std::log(tk / t[j]);
      }
      inv_sum += s / static_cast<double>(k - 1);
    }
    const double value = static_cast<double>(nn.n) / inv_sum;
    if (!(std::isfinite(value) && value > 0.0)) {
      throw NumericError("mle: degenerate neighbor distances at k=" + std::to_string(k));
    }
    est.per_k[k] = value;
  }
  for (const auto& [k, v] : est.per_k) total += v;
  est.value = total / static_cast<double>(est.per_k.size());
  return est;
}

IdEstimate twonn(const PointCloud& cloud, double discard_fraction, TwoNnFit fit) {
  if (!(discard_fraction >= 0.0 && discard_fraction < 0.5)) {
    throw InvalidArgument("discard fraction must lie in [0, 0.5), got " +
                          std::to_string(discard_fraction));
  }
  auto dd = dedup_points(cloud);
  if (dd.cloud.rows < kMinTwoNnPoints) {
    throw ValidationError("twonn needs n >= 10 distinct points, got " +
                          std::to_string(dd.cloud.rows));
  }
  auto est = twonn_from_neighbors(knn_distances(dd.cloud, 2), discard_fraction, fit);
  est.n_duplicates = dd.removed;
  return est;
}

IdEstimate mle_id(const PointCloud& cloud, std::span<const std::size_t> ks) {
  if (ks.empty()) throw InvalidArgument("mle needs at least one neighbor count");
  for (auto k : ks) {
    if (k <= 1) throw InvalidArgument("mle neighbor counts must exceed 1, got " + std::to_string(k));
  }
  auto dd = dedup_points(cloud);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  if (kmax >= dd.cloud.rows) {
    throw ValidationError("mle needs max(k)=" + std::to_string(kmax) + " < n=" +
                          std::to_string(dd.cloud.rows));
  }
  auto est = mle_from_neighbors(knn_distances(dd.cloud, kmax), ks);
  est.n_duplicates = dd.removed;
  return est;
}

}  // namespace anatomy::idim
