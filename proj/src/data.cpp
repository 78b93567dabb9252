#include "prime/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "prime/rng.hpp"

namespace prime {

std::size_t SeriesSet::total_observed() const {
  std::size_t n = 0;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.mask.numel(); ++i) n += s.mask[i] > 0.5 ? 1 : 0;
  }
  return n;
}

std::size_t EvalSplit::total_held_out() const {
  std::size_t n = 0;
  for (const Tensor& m : eval_mask) {
    for (std::size_t i = 0; i < m.numel(); ++i) n += m[i] > 0.5 ? 1 : 0;
  }
  return n;
}

namespace {

double parse_double(const std::string& field, std::size_t line_no, const char* what) {
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) {
    throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                             ": non-numeric " + what + " '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::string> read_variables_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open variables file " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' ')) {
      line.pop_back();
    }
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

SeriesSet parse_events(const std::string& path, const std::vector<std::string>& declared_variables,
                       std::size_t* duplicate_rows) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open event file " + path);

  SeriesSet set;
  set.feature_names = declared_variables;
  const bool infer_variables = declared_variables.empty();
  std::unordered_map<std::string, std::size_t> var_index;
  for (std::size_t i = 0; i < declared_variables.size(); ++i) {
    var_index[declared_variables[i]] = i;
  }

  // series id -> (timestamp -> (variable -> value)), series in file order.
  std::vector<std::string> series_order;
  std::unordered_map<std::string, std::map<double, std::unordered_map<std::size_t, double>>> rows;

  std::string line;
  std::size_t line_no = 0;
  std::size_t duplicates = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (!header_seen) {
      if (fields.size() != 4 || fields[0] != "series_id" || fields[1] != "timestamp" ||
          fields[2] != "variable" || fields[3] != "value") {
        throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                 ": expected header series_id,timestamp,variable,value");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 4) {
      throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": expected 4 fields, got " +
                               std::to_string(fields.size()));
    }
    const std::string& sid = fields[0];
    if (sid.empty()) {
      throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": empty series_id");
    }
    double ts = parse_double(fields[1], line_no, "timestamp");
    double value = parse_double(fields[3], line_no, "value");
    const std::string& var = fields[2];
    auto vit = var_index.find(var);
    std::size_t vi;
    if (vit == var_index.end()) {
      if (!infer_variables) {
        throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                 ": unknown variable '" + var + "'");
      }
      vi = set.feature_names.size();
      set.feature_names.push_back(var);
      var_index[var] = vi;
    } else {
      vi = vit->second;
    }
    auto rit = rows.find(sid);
    if (rit == rows.end()) {
      series_order.push_back(sid);
      rit = rows.emplace(sid, std::map<double, std::unordered_map<std::size_t, double>>{}).first;
    }
    auto& step = rit->second[ts];
    if (step.count(vi)) ++duplicates;
    step[vi] = value;  // last wins
  }
  if (duplicate_rows) *duplicate_rows = duplicates;

  std::size_t N = set.feature_names.size();
  for (const std::string& sid : series_order) {
    const auto& steps = rows[sid];
    Series s;
    s.id = sid;
    s.T = steps.size();
    s.timestamps = Tensor({s.T, N});
    s.values = Tensor({s.T, N});
    s.mask = Tensor({s.T, N});
    std::size_t t = 0;
    for (const auto& [ts, vars] : steps) {
      for (std::size_t n = 0; n < N; ++n) s.timestamps(t, n) = ts;
      for (const auto& [vi, value] : vars) {
        s.values(t, vi) = value;
        s.mask(t, vi) = 1.0;
      }
      ++t;
    }
    set.series.push_back(std::move(s));
  }
  return set;
}

void write_events_csv(const SeriesSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write event file " + path);
  out << "series_id,timestamp,variable,value\n";
  for (const Series& s : set.series) {
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t n = 0; n < set.n_features(); ++n) {
        if (s.mask(t, n) > 0.5) {
          out << s.id << ',' << format_g17(s.timestamps(t, n)) << ',' << set.feature_names[n]
              << ',' << format_g17(s.values(t, n)) << '\n';
        }
      }
    }
  }
  if (!out) throw std::runtime_error("write failed for event file " + path);
}

Tensor compute_time_gaps(const Tensor& timestamps, const Tensor& mask) {
  if (!timestamps.same_shape(mask)) {
    throw std::invalid_argument("compute_time_gaps: timestamps/mask shape mismatch");
  }
  std::size_t T = timestamps.rows(), N = timestamps.cols();
  Tensor delta({T, N});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 1; t < T; ++t) {
      double step = timestamps(t, n) - timestamps(t - 1, n);
      if (step < 0.0) {
        throw std::runtime_error("compute_time_gaps: decreasing timestamps at step " +
                                 std::to_string(t));
      }
      delta(t, n) = mask(t - 1, n) > 0.5 ? step : step + delta(t - 1, n);
    }
  }
  return delta;
}

Tensor compute_time_gaps(const Series& s) { return compute_time_gaps(s.timestamps, s.mask); }

NormStats normalize(SeriesSet& set) {
  std::size_t N = set.n_features();
  NormStats stats;
  stats.mean.assign(N, 0.0);
  stats.stddev.assign(N, 1.0);
  for (std::size_t n = 0; n < N; ++n) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const Series& s : set.series) {
      for (std::size_t t = 0; t < s.T; ++t) {
        if (s.mask(t, n) > 0.5) {
          sum += s.values(t, n);
          ++count;
        }
      }
    }
    if (count == 0) {
      throw std::runtime_error("normalize: feature '" + set.feature_names[n] +
                               "' has no observations");
    }
    double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const Series& s : set.series) {
      for (std::size_t t = 0; t < s.T; ++t) {
        if (s.mask(t, n) > 0.5) {
          double d = s.values(t, n) - mean;
          sq += d * d;
        }
      }
    }
    double stddev = std::sqrt(sq / static_cast<double>(count));
    stats.mean[n] = mean;
    stats.stddev[n] = std::max(stddev, 1e-8);
  }
  apply_normalization(set, stats);
  return stats;
}

void apply_normalization(SeriesSet& set, const NormStats& stats) {
  std::size_t N = set.n_features();
  if (stats.mean.size() != N || stats.stddev.size() != N) {
    throw std::invalid_argument("apply_normalization: stats arity mismatch");
  }
  for (Series& s : set.series) {
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t n = 0; n < N; ++n) {
        if (s.mask(t, n) > 0.5) {
          s.values(t, n) = (s.values(t, n) - stats.mean[n]) / stats.stddev[n];
        } else {
          s.values(t, n) = 0.0;
        }
      }
    }
  }
}

void denormalize(SeriesSet& set, const NormStats& stats) {
  std::size_t N = set.n_features();
  for (Series& s : set.series) {
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t n = 0; n < N; ++n) {
        s.values(t, n) = s.values(t, n) * stats.stddev[n] + stats.mean[n];
      }
    }
  }
}

EvalSplit holdout_mask(const SeriesSet& set, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw std::invalid_argument("holdout_mask: rate must lie in (0, 1)");
  }
  // Canonical enumeration of observed entries.
  struct Slot {
    std::size_t series, t, n;
  };
  std::vector<Slot> observed;
  for (std::size_t si = 0; si < set.series.size(); ++si) {
    const Series& s = set.series[si];
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t n = 0; n < s.n_features(); ++n) {
        if (s.mask(t, n) > 0.5) observed.push_back({si, t, n});
      }
    }
  }

  EvalSplit split;
  split.rate = rate;
  split.seed = seed;
  split.eval_mask.reserve(set.series.size());
  for (const Series& s : set.series) split.eval_mask.emplace_back(Tensor({s.T, s.n_features()}));

  std::size_t n_hold = static_cast<std::size_t>(rate * static_cast<double>(observed.size()));
  Rng rng(seed);
  for (std::size_t idx : rng.sample_without_replacement(observed.size(), n_hold)) {
    const Slot& slot = observed[idx];
    split.eval_mask[slot.series](slot.t, slot.n) = 1.0;
  }

  // Never fully blind a series: restore its earliest observation if needed.
  for (std::size_t si = 0; si < set.series.size(); ++si) {
    const Series& s = set.series[si];
    Tensor& em = split.eval_mask[si];
    bool any_visible = false;
    for (std::size_t i = 0; i < s.mask.numel() && !any_visible; ++i) {
      any_visible = s.mask[i] > 0.5 && em[i] < 0.5;
    }
    if (any_visible) continue;
    for (std::size_t t = 0; t < s.T && !any_visible; ++t) {
      for (std::size_t n = 0; n < s.n_features() && !any_visible; ++n) {
        if (s.mask(t, n) > 0.5) {
          em(t, n) = 0.0;
          any_visible = true;
        }
      }
    }
  }
  return split;
}

SeriesSet blind(const SeriesSet& set, const EvalSplit& split) {
  if (split.eval_mask.size() != set.series.size()) {
    throw std::invalid_argument("blind: split does not match series set");
  }
  SeriesSet out = set;
  for (std::size_t si = 0; si < out.series.size(); ++si) {
    Series& s = out.series[si];
    const Tensor& em = split.eval_mask[si];
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (em[i] > 0.5) {
        s.mask[i] = 0.0;
        s.values[i] = 0.0;
      }
    }
  }
  return out;
}

SplitIndices split_series(std::size_t n_series, std::uint64_t seed) {
  SplitIndices out;
  std::vector<std::size_t> idx(n_series);
  for (std::size_t i = 0; i < n_series; ++i) idx[i] = i;
  if (n_series < 3) {
    out.train = out.val = out.test = idx;
    return out;
  }
  Rng rng(seed);
  rng.shuffle(idx);
  std::size_t n_val = std::max<std::size_t>(1, n_series / 10);
  std::size_t n_test = std::max<std::size_t>(1, n_series / 10);
  std::size_t n_train = n_series - n_val - n_test;
  out.train.assign(idx.begin(), idx.begin() + n_train);
  out.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  out.test.assign(idx.begin() + n_train + n_val, idx.end());
  return out;
}

SeriesSet synth_generate(const SynthConfig& cfg) {
  if (!(cfg.obs_rate > 0.0 && cfg.obs_rate <= 1.0)) {
    throw std::invalid_argument("synth_generate: obs_rate must lie in (0, 1]");
  }
  if (cfg.t_max < cfg.t_min || cfg.t_min == 0) {
    throw std::invalid_argument("synth_generate: invalid T range");
  }
  SeriesSet set;
  for (std::size_t n = 0; n < cfg.n_features; ++n) set.feature_names.push_back("v" + std::to_string(n));
  if (cfg.n_series == 0) return set;

  Rng rng(cfg.seed);
  constexpr std::size_t kRegimes = 4;
  constexpr std::size_t kRank = 2;
  const double noise_sd = 0.05;

  // Shared regime dictionary: frequency pair, trend slope, mixing weights.
  struct Regime {
    double w1, w2, slope;
    std::vector<double> mix;     // [N x kRank]
    std::vector<double> offset;  // [N]
  };
  std::vector<Regime> regimes(kRegimes);
  for (std::size_t r = 0; r < kRegimes; ++r) {
    Regime& reg = regimes[r];
    reg.w1 = 0.6 + 0.45 * static_cast<double>(r) + rng.uniform(0.0, 0.1);
    reg.w2 = 1.3 + 0.35 * static_cast<double>(r) + rng.uniform(0.0, 0.1);
    reg.slope = rng.uniform(-0.08, 0.08);
    reg.mix.resize(cfg.n_features * kRank);
    reg.offset.resize(cfg.n_features);
    for (std::size_t i = 0; i < reg.mix.size(); ++i) reg.mix[i] = rng.gaussian();
    for (std::size_t i = 0; i < reg.offset.size(); ++i) reg.offset[i] = 0.5 * rng.gaussian();
  }

  for (std::size_t si = 0; si < cfg.n_series; ++si) {
    std::size_t regime_id = static_cast<std::size_t>(rng.below(kRegimes));
    const Regime& reg = regimes[regime_id];
    double phase1 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double phase2 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    std::size_t T = cfg.t_min + static_cast<std::size_t>(rng.below(cfg.t_max - cfg.t_min + 1));

    std::vector<double> times(T);
    double t_acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      t_acc += t == 0 ? 0.0 : rng.exponential(1.0);
      times[t] = t_acc;
    }

    Tensor values({T, cfg.n_features});
    Tensor mask({T, cfg.n_features});
    for (std::size_t t = 0; t < T; ++t) {
      double z1 = std::sin(reg.w1 * times[t] + phase1) + reg.slope * times[t];
      double z2 = std::cos(reg.w2 * times[t] + phase2);
      for (std::size_t n = 0; n < cfg.n_features; ++n) {
        values(t, n) = reg.mix[n * kRank] * z1 + reg.mix[n * kRank + 1] * z2 + reg.offset[n] +
                       noise_sd * rng.gaussian();
        mask(t, n) = rng.uniform() < cfg.obs_rate ? 1.0 : 0.0;
      }
    }
    // Keep every series observable.
    bool any = false;
    for (std::size_t i = 0; i < mask.numel(); ++i) any = any || mask[i] > 0.5;
    if (!any) mask(0, static_cast<std::size_t>(rng.below(cfg.n_features))) = 1.0;

    Series s;
    s.id = "s" + std::to_string(si);
    s.T = T;
    s.timestamps = Tensor({T, cfg.n_features});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < cfg.n_features; ++n) s.timestamps(t, n) = times[t];
    s.values = std::move(values);
    s.mask = std::move(mask);
    set.series.push_back(std::move(s));
  }

  // Every feature needs at least one observation across the set.
  for (std::size_t n = 0; n < cfg.n_features; ++n) {
    bool seen = false;
    for (const Series& s : set.series) {
      for (std::size_t t = 0; t < s.T && !seen; ++t) seen = s.mask(t, n) > 0.5;
      if (seen) break;
    }
    if (!seen) set.series[n % set.series.size()].mask(0, n) = 1.0;
  }

  // Steps with nothing observed would be lost by an event-file round trip;
  // drop them so in-memory and on-disk views agree.
  for (Series& s : set.series) {
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < s.T; ++t) {
      bool any = false;
      for (std::size_t n = 0; n < cfg.n_features; ++n) any = any || s.mask(t, n) > 0.5;
      if (any) keep.push_back(t);
    }
    if (keep.size() != s.T) {
      Tensor ts({keep.size(), cfg.n_features});
      Tensor vals({keep.size(), cfg.n_features});
      Tensor m({keep.size(), cfg.n_features});
      for (std::size_t i = 0; i < keep.size(); ++i) {
        for (std::size_t n = 0; n < cfg.n_features; ++n) {
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
    // Placeholder zeros at unobserved slots.
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i] < 0.5) s.values[i] = 0.0;
    }
  }
  return set;
}

}  // namespace prime
