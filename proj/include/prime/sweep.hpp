#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prime/data.hpp"
#include "prime/metrics.hpp"
#include "prime/training.hpp"

namespace prime {

enum class SweepAxis { ObservationRate, PrototypeCount, PrototypeStartEpoch, LossAblation };

SweepAxis sweep_axis_from_string(const std::string& s);
std::string sweep_axis_name(SweepAxis axis);

struct SweepCell {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n_points = 0;
};

struct SweepTable {
  std::vector<SweepCell> cells;                       // one per (value, seed)
  std::vector<std::pair<SweepCell, SweepCell>> aggregates;  // (mean, std) per value
};

// Full protocol for one configuration: normalize -> 8:1:1 split -> hold-out
// blinding -> fit on the training split -> metrics on the test split's
// held-out entries. `raw` is consumed unnormalized.
MetricReport run_experiment(const SeriesSet& raw, const TrainConfig& cfg);

// Same protocol with naive predictors in place of the model.
MetricReport run_baseline(const SeriesSet& raw, BaselineKind kind, const TrainConfig& cfg);

// fit+evaluate per (value, seed). Axis semantics: observation_rate keeps
// that fraction of the observed entries before the pipeline runs;
// prototype_count overrides K; prototype_start_epoch overrides the
// activation epoch; loss_ablation takes a 3-char bitmask over
// (s2p, p2s, sep), e.g. "101".
SweepTable sweep(SweepAxis axis, const std::vector<std::string>& values, const SeriesSet& raw,
                 const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                 std::size_t threads = 1);

// Header: axis,value,seed,mse,mae,n_points. Aggregate rows use seed "mean"
// and "std".
void write_sweep_csv(const SweepTable& table, const std::string& path);

// Retains `rate` of the observed entries (seeded), zeroing the rest.
SeriesSet subsample_observations(const SeriesSet& set, double rate, std::uint64_t seed);

}  // namespace prime
