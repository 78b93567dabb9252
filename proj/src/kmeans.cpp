#include "prime/kmeans.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "prime/rng.hpp"

namespace prime {

namespace {
double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}
}  // namespace

Tensor kmeans_cluster(const Tensor& points, std::size_t K, std::uint64_t seed,
                      std::size_t max_iters) {
  if (points.rank() != 2) throw std::invalid_argument("kmeans_cluster: rank-2 points required");
  std::size_t M = points.rows(), d = points.cols();
  if (K == 0) throw std::invalid_argument("kmeans_cluster: K must be positive");
  if (M < K) {
    throw std::invalid_argument(
        "kmeans_cluster: fewer points than clusters (" + std::to_string(M) + " < " +
        std::to_string(K) + "); collect a larger warmup sample");
  }

  Rng rng(seed);
  Tensor centroids({K, d});
  const double* P = points.data();

  // k-means++ seeding: first centroid uniform, rest D^2-weighted.
  std::vector<double> dist2(M, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(M));
  for (std::size_t k2 = 0; k2 < d; ++k2) centroids(0, k2) = P[first * d + k2];
  for (std::size_t k = 1; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      double dd = sq_dist(P + i * d, centroids.data() + (k - 1) * d, d);
      if (dd < dist2[i]) dist2[i] = dd;
      total += dist2[i];
    }
    std::size_t pick;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double acc = 0.0;
      pick = M - 1;
      for (std::size_t i = 0; i < M; ++i) {
        acc += dist2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      for (std::size_t k2 = 0; k2 < d; ++k2) centroids(k, k2) = P[pick * d + k2];
    } else {
      // All remaining points coincide with chosen centroids; jitter off the
      // previous one so centroids stay pairwise distinct.
      for (std::size_t k2 = 0; k2 < d; ++k2) {
        centroids(k, k2) = centroids(k - 1, k2) + 1e-6 * rng.gaussian();
      }
    }
  }

  std::vector<std::size_t> assign(M, 0);
  std::vector<std::size_t> counts(K, 0);
  std::vector<double> point_d2(M, 0.0);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // Assignment step.
    for (std::size_t i = 0; i < M; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t bj = 0;
      for (std::size_t j = 0; j < K; ++j) {
        double dd = sq_dist(P + i * d, centroids.data() + j * d, d);
        if (dd < best) {
          best = dd;
          bj = j;
        }
      }
      assign[i] = bj;
      point_d2[i] = best;
    }

    // Update step.
    Tensor next({K, d});
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < M; ++i) {
      counts[assign[i]]++;
      for (std::size_t k2 = 0; k2 < d; ++k2) next(assign[i], k2) += P[i * d + k2];
    }
    for (std::size_t j = 0; j < K; ++j) {
      if (counts[j] > 0) {
        for (std::size_t k2 = 0; k2 < d; ++k2) next(j, k2) /= static_cast<double>(counts[j]);
      } else {
        // Re-seed an empty cluster from the farthest point.
        std::size_t far = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < M; ++i) {
          if (point_d2[i] > best) {
            best = point_d2[i];
            far = i;
          }
        }
        for (std::size_t k2 = 0; k2 < d; ++k2) next(j, k2) = P[far * d + k2];
        point_d2[far] = 0.0;  // avoid re-seeding two clusters at one point
      }
    }

    double shift = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      shift = std::max(shift, std::sqrt(sq_dist(next.data() + j * d, centroids.data() + j * d, d)));
    }
    centroids = std::move(next);
    if (shift < 1e-6) break;
  }
  return centroids;
}

}  // namespace prime
