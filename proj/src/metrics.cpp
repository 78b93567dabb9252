#include "prime/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace prime {

MetricReport evaluate_imputation(const std::vector<Tensor>& predictions,
                                 const std::vector<const Series*>& truth,
                                 const std::vector<const Tensor*>& eval_masks) {
  if (predictions.size() != truth.size() || predictions.size() != eval_masks.size()) {
    throw std::invalid_argument("evaluate_imputation: input arity mismatch");
  }
  double se = 0.0, ae = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Tensor& pred = predictions[i];
    const Tensor& vals = truth[i]->values;
    const Tensor& em = *eval_masks[i];
    if (!pred.same_shape(vals) || !pred.same_shape(em)) {
      throw std::invalid_argument("evaluate_imputation: shape mismatch at series " +
                                  std::to_string(i));
    }
    for (std::size_t k = 0; k < pred.numel(); ++k) {
      if (em[k] > 0.5) {
        double e = vals[k] - pred[k];
        se += e * e;
        ae += std::abs(e);
        ++n;
      }
    }
  }
  if (n == 0) throw std::invalid_argument("evaluate_imputation: empty eval mask");
  MetricReport r;
  r.mse = se / static_cast<double>(n);
  r.mae = ae / static_cast<double>(n);
  r.n_eval_points = n;
  return r;
}

Tensor baseline_impute_series(BaselineKind kind, const Series& blinded) {
  std::size_t T = blinded.T, N = blinded.n_features();
  Tensor pred({T, N});
  if (kind == BaselineKind::Mean) return pred;  // zero == per-feature mean after standardization
  for (std::size_t n = 0; n < N; ++n) {
    double carry = 0.0;  // before the first observation: normalized mean
    for (std::size_t t = 0; t < T; ++t) {
      if (blinded.mask(t, n) > 0.5) carry = blinded.values(t, n);
      pred(t, n) = carry;
    }
  }
  return pred;
}

MetricReport aggregate_seeds(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_seeds: no reports");
  MetricReport agg;
  for (const MetricReport& r : reports) {
    agg.seed_mse.push_back(r.mse);
    agg.seed_mae.push_back(r.mae);
    agg.mse += r.mse;
    agg.mae += r.mae;
    agg.n_eval_points += r.n_eval_points;
  }
  double k = static_cast<double>(reports.size());
  agg.mse /= k;
  agg.mae /= k;
  double vs = 0.0, va = 0.0;
  for (const MetricReport& r : reports) {
    vs += (r.mse - agg.mse) * (r.mse - agg.mse);
    va += (r.mae - agg.mae) * (r.mae - agg.mae);
  }
  agg.mse_std = std::sqrt(vs / k);
  agg.mae_std = std::sqrt(va / k);
  return agg;
}

}  // namespace prime
