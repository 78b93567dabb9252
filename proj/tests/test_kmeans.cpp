#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "prime/kmeans.hpp"
#include "prime/rng.hpp"

using namespace prime;

namespace {

double kmeans_cost(const Tensor& points, const Tensor& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < points.cols(); ++k) {
        double d = points(i, k) - centroids(j, k);
        acc += d * d;
      }
      best = std::min(best, acc);
    }
    total += best;
  }
  return total;
}

// Exhaustive 2-means: best cost over all 2^M partitions.
double best_two_means_cost(const Tensor& points) {
  std::size_t M = points.rows(), d = points.cols();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t bits = 1; bits + 1 < (1u << M); ++bits) {
    std::vector<double> c0(d, 0.0), c1(d, 0.0);
    std::size_t n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < M; ++i) {
      bool in1 = (bits >> i) & 1u;
      for (std::size_t k = 0; k < d; ++k) (in1 ? c1[k] : c0[k]) += points(i, k);
      (in1 ? n1 : n0)++;
    }
    if (n0 == 0 || n1 == 0) continue;
    for (std::size_t k = 0; k < d; ++k) {
      c0[k] /= static_cast<double>(n0);
      c1[k] /= static_cast<double>(n1);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      bool in1 = (bits >> i) & 1u;
      const std::vector<double>& c = in1 ? c1 : c0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = points(i, k) - c[k];
        total += diff * diff;
      }
    }
    best = std::min(best, total);
  }
  return best;
}

}  // namespace

TEST_CASE("K distinct points with K clusters are a fixed point") {
  Tensor pts = Tensor::mat({{0, 0}, {5, 5}, {-4, 3}});
  Tensor c = kmeans_cluster(pts, 3, 42);
  // Each point is matched by exactly one centroid.
  for (std::size_t i = 0; i < 3; ++i) {
    bool found = false;
    for (std::size_t j = 0; j < 3; ++j) {
      found = found || (std::abs(c(j, 0) - pts(i, 0)) < 1e-9 &&
                        std::abs(c(j, 1) - pts(i, 1)) < 1e-9);
    }
    CHECK(found);
  }
}

TEST_CASE("two separated blobs match the exhaustive 2-means optimum") {
  Rng rng(3);
  Tensor pts({12, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    pts(i, 0) = -10.0 + 0.3 * rng.gaussian();
    pts(i, 1) = -10.0 + 0.3 * rng.gaussian();
  }
  for (std::size_t i = 6; i < 12; ++i) {
    pts(i, 0) = 10.0 + 0.3 * rng.gaussian();
    pts(i, 1) = 10.0 + 0.3 * rng.gaussian();
  }
  Tensor c = kmeans_cluster(pts, 2, 7);
  CHECK(kmeans_cost(pts, c) == doctest::Approx(best_two_means_cost(pts)).epsilon(1e-6));

  // Each centroid sits inside its blob's bounding box.
  for (std::size_t j = 0; j < 2; ++j) {
    bool left = c(j, 0) < 0.0;
    double lo = left ? -12.0 : 8.0, hi = left ? -8.0 : 12.0;
    CHECK(c(j, 0) > lo);
    CHECK(c(j, 0) < hi);
    CHECK(c(j, 1) > lo);
    CHECK(c(j, 1) < hi);
  }
}

TEST_CASE("deterministic given the seed") {
  Rng rng(8);
  Tensor pts({40, 3});
  for (std::size_t i = 0; i < pts.numel(); ++i) pts[i] = rng.gaussian();
  Tensor a = kmeans_cluster(pts, 5, 1234);
  Tensor b = kmeans_cluster(pts, 5, 1234);
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("rejects fewer points than clusters") {
  Tensor pts = Tensor::mat({{1, 2}, {3, 4}});
  CHECK_THROWS_WITH_AS(kmeans_cluster(pts, 3, 0),
                       doctest::Contains("larger warmup sample"), std::invalid_argument);
}
