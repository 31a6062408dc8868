#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "anatomy/matrix.hpp"

namespace anatomy::idim {

// Point cloud with one point per row. Same storage as an LTXT matrix.
using PointCloud = EmbeddingMatrix;

struct DedupResult {
  PointCloud cloud;
  std::size_t removed = 0;
};

// Removes exact duplicates (first occurrence kept; -0 and +0 compare equal).
DedupResult dedup_points(const PointCloud& cloud);

// Uniform sample of `count` rows without replacement, in original order.
// Returns the cloud unchanged when it has at most `count` rows.
PointCloud sample_points(const PointCloud& cloud, std::size_t count, std::uint64_t seed);

// Ascending Euclidean distances from every point to its k nearest other
// points, by exhaustive search.
struct NeighborTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> dist;  // n x k, row-major

  std::span<const double> of(std::size_t i) const { return {dist.data() + i * k, k}; }
};

NeighborTable knn_distances(const PointCloud& cloud, std::size_t k);

enum class TwoNnFit {
  kLeastSquares,  // slope through the origin of -ln(1 - F) against ln(mu)
  kClosedForm,    // n_used / sum ln(mu)
};

inline constexpr double kDefaultDiscard = 0.10;
inline constexpr std::size_t kDefaultKs[] = {5, 10, 20, 50};

struct IdEstimate {
  std::string method;  // "twonn" or "mle"
  double value = 0.0;
  std::map<std::size_t, double> per_k;  // mle only
  double discard_fraction = 0.0;        // twonn only
  std::size_t n_points = 0;             // after deduplication
  std::size_t n_used = 0;
  std::size_t n_duplicates = 0;
};

IdEstimate twonn(const PointCloud& cloud, double discard_fraction = kDefaultDiscard,
                 TwoNnFit fit = TwoNnFit::kLeastSquares);
IdEstimate mle_id(const PointCloud& cloud, std::span<const std::size_t> ks = kDefaultKs);

// Estimators on precomputed neighbor tables of a duplicate-free cloud.
IdEstimate twonn_from_neighbors(const NeighborTable& nn, double discard_fraction,
                                TwoNnFit fit = TwoNnFit::kLeastSquares);
IdEstimate mle_from_neighbors(const NeighborTable& nn, std::span<const std::size_t> ks);

}  // namespace anatomy::idim
