#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prime/tensor.hpp"

namespace prime {

// One irregularly sampled multivariate series. All grids are [T x N];
// mask(t, n) == 1 marks an observed entry. Timestamps are stored
// per-feature even when ingestion provides one time per step.
struct Series {
  std::string id;
  std::size_t T = 0;
  Tensor timestamps;
  Tensor values;
  Tensor mask;

  std::size_t n_features() const { return values.cols(); }
};

struct SeriesSet {
  std::vector<Series> series;
  std::vector<std::string> feature_names;

  std::size_t n_features() const { return feature_names.size(); }
  std::size_t total_observed() const;
  bool empty() const { return series.empty(); }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8
};

// Boolean hold-out mask per series; eval_mask(t, n) == 1 marks an observed
// entry hidden from the model and scored at evaluation time.
struct EvalSplit {
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::vector<Tensor> eval_mask;

  std::size_t total_held_out() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct SynthConfig {
  std::size_t n_series = 64;
  std::size_t n_features = 6;
  std::size_t t_min = 20;
  std::size_t t_max = 40;
  double obs_rate = 0.3;
  std::uint64_t seed = 1;
};

// Event CSV: header `series_id,timestamp,variable,value`, one observation
// per row. Variables come from `declared_variables` when non-empty,
// otherwise from first occurrence order. Rows sharing (series_id,
// timestamp) merge into one step; duplicate (series, time, variable)
// entries resolve last-wins and bump *duplicate_rows.
SeriesSet parse_events(const std::string& path,
                       const std::vector<std::string>& declared_variables = {},
                       std::size_t* duplicate_rows = nullptr);

// One variable name per line; blank lines ignored.
std::vector<std::string> read_variables_file(const std::string& path);

// Writes the observed entries of `set` in event CSV order (series, step,
// feature).
void write_events_csv(const SeriesSet& set, const std::string& path);

// Elapsed time since each feature was last observed. Row 0 is zero; a gap
// keeps accumulating while the previous step's entry was missing.
Tensor compute_time_gaps(const Series& s);
Tensor compute_time_gaps(const Tensor& timestamps, const Tensor& mask);

// Standardizes observed entries per feature in place (population std,
// floored at 1e-8) and zeroes missing slots. Errors on features with no
// observations.
NormStats normalize(SeriesSet& set);
void denormalize(SeriesSet& set, const NormStats& stats);
void apply_normalization(SeriesSet& set, const NormStats& stats);

// Samples floor(rate * observed) observed entries without replacement
// across the whole set. A series is never fully blinded: if everything it
// has got held out, its earliest observation is restored.
EvalSplit holdout_mask(const SeriesSet& set, double rate, std::uint64_t seed);

// Training view: mask (and value placeholder) zeroed at held-out entries.
SeriesSet blind(const SeriesSet& set, const EvalSplit& split);

// 8:1:1 split by series, seeded. Sets smaller than 3 series fall back to
// using the full set for every role.
SplitIndices split_series(std::size_t n_series, std::uint64_t seed);

// Correlated sinusoid-plus-trend series over a small dictionary of shared
// regimes, sampled on an irregular timestamp grid with Bernoulli(obs_rate)
// visibility. Bit-deterministic given the seed.
SeriesSet synth_generate(const SynthConfig& cfg);

}  // namespace prime
