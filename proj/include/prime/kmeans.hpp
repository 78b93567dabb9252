#pragma once

#include <cstdint>

#include "prime/tensor.hpp"

namespace prime {

// Lloyd's algorithm with k-means++ seeding on row vectors of `points`
// [M x d]. Runs until the largest centroid shift drops below 1e-6 or
// max_iters passes; empty clusters are re-seeded from the point farthest
// from its assigned centroid. Deterministic given seed. Returns [K x d].
Tensor kmeans_cluster(const Tensor& points, std::size_t K, std::uint64_t seed,
                      std::size_t max_iters = 100);

}  // namespace prime
