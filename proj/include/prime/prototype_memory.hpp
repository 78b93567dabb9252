#pragma once

#include <cstdint>

#include "prime/lap.hpp"
#include "prime/tape.hpp"
#include "prime/tensor.hpp"

namespace prime {

// Bank of K learnable d-dimensional prototype vectors. P is the live value;
// during training it is mirrored by the "prototypes.P" store entry.
struct PrototypeBank {
  std::size_t K = 0;
  std::size_t d = 0;
  double margin = 0.0;
  bool initialized = false;
  Tensor P;  // [K x d]
};

double default_margin(std::size_t K);

// Cluster centroids of warmup representations S [M x d] seed the bank.
// margin_override <= 0 selects the 50/sqrt(K) default.
PrototypeBank init_prototypes_kmeans(const Tensor& S, std::size_t K, std::uint64_t seed,
                                     std::size_t max_iters = 100, double margin_override = 0.0);

struct ClusterLosses {
  Value s_to_p;  // sum over representations of distance to nearest prototype
  Value p_to_s;  // sum over one-to-one assigned (prototype, representation) pairs
  Assignment assignment;
};

// Both losses take the representations as a plain tensor: they are
// gradient-detached by construction, so only P receives gradients.
ClusterLosses loss_cluster(Tape& tape, const PrototypeBank& bank, Value P, const Tensor& S);

// Hinge penalty over ordered prototype pairs closer than the margin.
Value loss_separation(Tape& tape, const PrototypeBank& bank, Value P);

// Pairwise L2 distances, prototypes on rows: [K x M].
Tensor prototype_distance_matrix(const Tensor& P, const Tensor& S);

}  // namespace prime
