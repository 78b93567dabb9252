#include "prime/sweep.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "prime/rng.hpp"

namespace prime {

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "observation_rate" || s == "observation-rate") return SweepAxis::ObservationRate;
  if (s == "prototype_count" || s == "prototype-count") return SweepAxis::PrototypeCount;
  if (s == "prototype_start_epoch" || s == "prototype-start-epoch") {
    return SweepAxis::PrototypeStartEpoch;
  }
  if (s == "loss_ablation" || s == "loss-ablation") return SweepAxis::LossAblation;
  throw std::invalid_argument("unknown sweep axis '" + s + "'");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::ObservationRate: return "observation_rate";
    case SweepAxis::PrototypeCount: return "prototype_count";
    case SweepAxis::PrototypeStartEpoch: return "prototype_start_epoch";
    case SweepAxis::LossAblation: return "loss_ablation";
  }
  return "";
}

SeriesSet subsample_observations(const SeriesSet& set, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("subsample_observations: rate must lie in (0, 1]");
  }
  if (rate == 1.0) return set;
  // Dropping observations is hold-out machinery reused with 1-rate, made
  // permanent, followed by removal of steps that lost everything.
  EvalSplit drop = holdout_mask(set, 1.0 - rate, seed);
  SeriesSet out = blind(set, drop);
  for (Series& s : out.series) {
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < s.T; ++t) {
      bool any = false;
      for (std::size_t n = 0; n < s.n_features(); ++n) any = any || s.mask(t, n) > 0.5;
      if (any) keep.push_back(t);
    }
    if (keep.size() == s.T) continue;
    std::size_t N = s.n_features();
    Tensor ts({keep.size(), N}), vals({keep.size(), N}), m({keep.size(), N});
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t n = 0; n < N; ++n) {
        ts(i, n) = s.timestamps(keep[i], n);
        vals(i, n) = s.values(keep[i], n);
        m(i, n) = s.mask(keep[i], n);
      }
    }
    s.timestamps = std::move(ts);
    s.values = std::move(vals);
    s.mask = std::move(m);
    s.T = keep.size();
  }
  return out;
}

namespace {

struct Protocol {
  SeriesSet normalized;
  SplitIndices split;
  EvalSplit eval_split;
  SeriesSet blinded;
};

Protocol prepare_protocol(const SeriesSet& raw, const TrainConfig& cfg) {
  Protocol p;
  p.normalized = raw;
  normalize(p.normalized);
  p.split = split_series(p.normalized.series.size(), cfg.seed);
  p.eval_split = holdout_mask(p.normalized, cfg.holdout_rate, cfg.seed);
  p.blinded = blind(p.normalized, p.eval_split);
  return p;
}

MetricReport score_test_split(const Protocol& p, const std::vector<Tensor>& preds) {
  std::vector<const Series*> truth;
  std::vector<const Tensor*> masks;
  for (std::size_t idx : p.split.test) {
    truth.push_back(&p.normalized.series[idx]);
    masks.push_back(&p.eval_split.eval_mask[idx]);
  }
  return evaluate_imputation(preds, truth, masks);
}

}  // namespace

MetricReport run_experiment(const SeriesSet& raw, const TrainConfig& cfg) {
  Protocol p = prepare_protocol(raw, cfg);
  FitResult fitted = fit(p.normalized, p.split, p.eval_split, cfg);
  std::vector<Tensor> preds;
  for (std::size_t idx : p.split.test) {
    preds.push_back(impute_series(fitted.params, fitted.model, fitted.best_prototypes_active,
                                  p.blinded.series[idx]));
  }
  return score_test_split(p, preds);
}

MetricReport run_baseline(const SeriesSet& raw, BaselineKind kind, const TrainConfig& cfg) {
  Protocol p = prepare_protocol(raw, cfg);
  std::vector<Tensor> preds;
  for (std::size_t idx : p.split.test) {
    preds.push_back(baseline_impute_series(kind, p.blinded.series[idx]));
  }
  return score_test_split(p, preds);
}

namespace {

TrainConfig apply_axis(SweepAxis axis, const std::string& value, const TrainConfig& base) {
  TrainConfig cfg = base;
  switch (axis) {
    case SweepAxis::ObservationRate:
      break;  // applied to the data, not the config
    case SweepAxis::PrototypeCount:
      cfg.K = static_cast<std::size_t>(std::stoul(value));
      break;
    case SweepAxis::PrototypeStartEpoch:
      cfg.prototype_start_epoch = static_cast<std::size_t>(std::stoul(value));
      break;
    case SweepAxis::LossAblation: {
      if (value.size() != 3 || value.find_first_not_of("01") != std::string::npos) {
        throw std::invalid_argument("loss_ablation values are 3-char bitmasks over (s2p,p2s,sep)");
      }
      if (value[0] == '0') cfg.lambda_s2p = 0.0;
      if (value[1] == '0') cfg.lambda_p2s = 0.0;
      if (value[2] == '0') cfg.lambda_sep = 0.0;
      break;
    }
  }
  return cfg;
}

}  // namespace

SweepTable sweep(SweepAxis axis, const std::vector<std::string>& values, const SeriesSet& raw,
                 const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                 std::size_t threads) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  if (seeds.empty()) throw std::invalid_argument("sweep: empty seed list");

  struct Job {
    std::size_t vi, si;
  };
  std::vector<Job> jobs;
  for (std::size_t vi = 0; vi < values.size(); ++vi)
    for (std::size_t si = 0; si < seeds.size(); ++si) jobs.push_back({vi, si});

  std::vector<SweepCell> cells(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto worker = [&]() {
    for (;;) {
      std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      try {
        TrainConfig cfg = apply_axis(axis, values[job.vi], base);
        cfg.seed = seeds[job.si];
        SeriesSet data = raw;
        if (axis == SweepAxis::ObservationRate) {
          data = subsample_observations(raw, std::stod(values[job.vi]), cfg.seed);
        }
        MetricReport r = run_experiment(data, cfg);
        cells[j] = {sweep_axis_name(axis), values[job.vi], seeds[job.si], r.mse, r.mae,
                    r.n_eval_points};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SweepTable table;
  table.cells = std::move(cells);
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<MetricReport> reports;
    std::size_t points = 0;
    for (const SweepCell& c : table.cells) {
      if (c.value == values[vi]) {
        MetricReport r;
        r.mse = c.mse;
        r.mae = c.mae;
        r.n_eval_points = c.n_points;
        points += c.n_points;
        reports.push_back(r);
      }
    }
    MetricReport agg = aggregate_seeds(reports);
    SweepCell mean{sweep_axis_name(axis), values[vi], 0, agg.mse, agg.mae, points};
    SweepCell stddev{sweep_axis_name(axis), values[vi], 0, agg.mse_std, agg.mae_std, 0};
    table.aggregates.emplace_back(mean, stddev);
  }
  return table;
}

void write_sweep_csv(const SweepTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write sweep file " + path);
  out << "axis,value,seed,mse,mae,n_points\n";
  char buf[192];
  for (const SweepCell& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.17g,%.17g,%zu\n", c.axis.c_str(),
                  c.value.c_str(), static_cast<unsigned long long>(c.seed), c.mse, c.mae,
                  c.n_points);
    out << buf;
  }
  for (const auto& [mean, stddev] : table.aggregates) {
    std::snprintf(buf, sizeof(buf), "%s,%s,mean,%.17g,%.17g,%zu\n", mean.axis.c_str(),
                  mean.value.c_str(), mean.mse, mean.mae, mean.n_points);
    out << buf;
    std::snprintf(buf, sizeof(buf), "%s,%s,std,%.17g,%.17g,%zu\n", stddev.axis.c_str(),
                  stddev.value.c_str(), stddev.mse, stddev.mae, stddev.n_points);
    out << buf;
  }
}

}  // namespace prime
