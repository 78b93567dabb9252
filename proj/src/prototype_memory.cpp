#include "prime/prototype_memory.hpp"

#include <cmath>
#include <stdexcept>

#include "prime/kmeans.hpp"

namespace prime {

double default_margin(std::size_t K) { return 50.0 / std::sqrt(static_cast<double>(K)); }

PrototypeBank init_prototypes_kmeans(const Tensor& S, std::size_t K, std::uint64_t seed,
                                     std::size_t max_iters, double margin_override) {
  if (K < 2) throw std::invalid_argument("init_prototypes_kmeans: K must be at least 2");
  PrototypeBank bank;
  bank.K = K;
  bank.d = S.cols();
  bank.margin = margin_override > 0.0 ? margin_override : default_margin(K);
  bank.P = kmeans_cluster(S, K, seed, max_iters);
  // Centroids must stay pairwise distinct; nudge exact duplicates apart.
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      bool same = true;
      for (std::size_t k = 0; k < bank.d && same; ++k) same = bank.P(a, k) == bank.P(b, k);
      if (same) bank.P(b, 0) += 1e-6 * static_cast<double>(b + 1);
    }
  }
  bank.initialized = true;
  return bank;
}

Tensor prototype_distance_matrix(const Tensor& P, const Tensor& S) {
  if (P.rank() != 2 || S.rank() != 2 || P.cols() != S.cols()) {
    throw std::invalid_argument("prototype_distance_matrix: dimension error");
  }
  std::size_t K = P.rows(), M = S.rows(), d = P.cols();
  Tensor cost({K, M});
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t i = 0; i < M; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = P(j, k) - S(i, k);
        acc += diff * diff;
      }
      cost(j, i) = std::sqrt(acc);
    }
  }
  return cost;
}

ClusterLosses loss_cluster(Tape& tape, const PrototypeBank& bank, Value P, const Tensor& S) {
  if (!bank.initialized) throw std::logic_error("loss_cluster: prototype bank not initialized");
  if (S.rank() != 2 || S.rows() == 0) {
    throw std::invalid_argument("loss_cluster: non-empty representations required");
  }
  const Tensor& pv = tape.val(P);
  if (pv.rows() != bank.K || pv.cols() != bank.d || S.cols() != bank.d) {
    throw std::invalid_argument("loss_cluster: dimension error");
  }
  ClusterLosses out;
  out.s_to_p = tape.min_pairwise_dist_sum(P, S);
  out.assignment = solve_lap(prototype_distance_matrix(pv, S));
  out.p_to_s = tape.assigned_dist_sum(P, S, out.assignment.pairs);
  return out;
}

Value loss_separation(Tape& tape, const PrototypeBank& bank, Value P) {
  if (bank.K < 2) throw std::logic_error("loss_separation: needs at least two prototypes");
  return tape.separation_hinge_sum(P, bank.margin);
}

}  // namespace prime
