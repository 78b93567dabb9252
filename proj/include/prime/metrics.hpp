#pragma once

#include <cstddef>
#include <vector>

#include "prime/data.hpp"
#include "prime/tensor.hpp"

namespace prime {

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n_eval_points = 0;
  // Filled by aggregate_seeds.
  std::vector<double> seed_mse, seed_mae;
  double mse_std = 0.0;
  double mae_std = 0.0;
};

// MSE/MAE over entries with eval_mask == 1 only, in normalized space.
// predictions[i] pairs with truth[i] and eval_masks[i].
MetricReport evaluate_imputation(const std::vector<Tensor>& predictions,
                                 const std::vector<const Series*>& truth,
                                 const std::vector<const Tensor*>& eval_masks);

enum class BaselineKind { Mean, Locf };

// Predictions for one blinded series: global mean (zero in normalized
// space) or last observation carried forward with zero fallback.
Tensor baseline_impute_series(BaselineKind kind, const Series& blinded);

// Mean and population std across per-seed reports.
MetricReport aggregate_seeds(const std::vector<MetricReport>& reports);

}  // namespace prime
