#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "prime/tensor.hpp"

namespace prime {

// One-to-one minimum-cost assignment. pairs holds (row, col) indices into
// the cost matrix; |pairs| == min(rows, cols).
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double cost = 0.0;
};

// Jonker-Volgenant solver on a dense cost matrix [R x C]. Rectangular
// instances are zero-padded to square, which preserves the optimum of the
// side that must be fully assigned. Throws on non-finite costs.
Assignment solve_lap(const Tensor& cost);

}  // namespace prime
