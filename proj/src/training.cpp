#include "prime/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "prime/metrics.hpp"

namespace prime {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint arrays are written little-endian");

double TrainConfig::resolved_margin() const { return margin > 0.0 ? margin : default_margin(K); }

ModelConfig TrainConfig::model_config(std::size_t n_features) const {
  ModelConfig mc;
  mc.n_features = n_features;
  mc.d = d;
  mc.d_mlp = d_mlp;
  mc.disable_prototypes = disable_prototypes;
  mc.disable_refinement = disable_refinement;
  if (gelu_form == "exact") {
    mc.gelu_form = Activation::GeluExact;
  } else if (gelu_form == "tanh") {
    mc.gelu_form = Activation::GeluTanh;
  } else {
    throw std::invalid_argument("TrainConfig: unknown gelu_form '" + gelu_form + "'");
  }
  return mc;
}

void TrainConfig::validate() const {
  if (d == 0) throw std::invalid_argument("TrainConfig: d must be positive");
  if (!disable_prototypes && K < 2) throw std::invalid_argument("TrainConfig: K must be >= 2");
  if (lambda < 0 || lambda_s2p < 0 || lambda_p2s < 0 || lambda_sep < 0) {
    throw std::invalid_argument("TrainConfig: loss weights must be non-negative");
  }
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (!(holdout_rate > 0.0 && holdout_rate < 1.0)) {
    throw std::invalid_argument("TrainConfig: holdout_rate must lie in (0, 1)");
  }
  if (gelu_form != "exact" && gelu_form != "tanh") {
    throw std::invalid_argument("TrainConfig: unknown gelu_form '" + gelu_form + "'");
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& store) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const std::string& name : store.names()) {
    Tensor& theta = store.value(name);
    const Tensor& g = store.grad(name);
    auto it = state_.find(name);
    if (it == state_.end()) {
      it = state_.emplace(name, std::make_pair(Tensor(theta.shape()), Tensor(theta.shape()))).first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      theta[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Tensor collect_batch_representations(ParamStore& store, const ModelConfig& mc,
                                     const std::vector<const SeriesTensors*>& batch,
                                     bool prototypes_active) {
  Tape tape(false);
  TapeBind bind(tape, store);
  ModelRefs refs = bind_model(bind, mc, prototypes_active);
  std::vector<Tensor> rows;
  std::size_t total = 0;
  for (const SeriesTensors* st : batch) {
    rows.push_back(tape.val(run_series(tape, refs, mc, *st).H));
    total += st->T;
  }
  Tensor S({total, mc.d});
  std::size_t row = 0;
  for (const Tensor& H : rows) {
    for (std::size_t t = 0; t < H.rows(); ++t, ++row)
      for (std::size_t k = 0; k < mc.d; ++k) S(row, k) = H(t, k);
  }
  return S;
}

BatchLossTerms build_batch_loss(Tape& tape, TapeBind& bind, const ModelConfig& mc,
                                const TrainConfig& cfg,
                                const std::vector<const SeriesTensors*>& batch,
                                bool prototypes_active, const PrototypeBank* bank,
                                const Tensor* frozen_reps) {
  if (batch.empty()) throw std::invalid_argument("build_batch_loss: empty batch");
  ModelRefs refs = bind_model(bind, mc, prototypes_active);

  std::vector<Value> finals, fwds, bwds;
  std::vector<SeriesForward> outs;
  outs.reserve(batch.size());
  double obs = 0.0;
  std::size_t total_steps = 0;
  for (const SeriesTensors* st : batch) {
    outs.push_back(run_series(tape, refs, mc, *st));
    finals.push_back(outs.back().sq_final);
    fwds.push_back(outs.back().sq_fwd);
    bwds.push_back(outs.back().sq_bwd);
    obs += st->obs_count;
    total_steps += st->T;
  }
  if (obs <= 0.0) throw std::invalid_argument("build_batch_loss: batch has no observed entries");

  BatchLossTerms terms;
  double inv_obs = 1.0 / obs;
  terms.obs_count = obs;
  Value final_mean = tape.scale(tape.add_n(finals), inv_obs);
  Value fwd_mean = tape.scale(tape.add_n(fwds), inv_obs);
  Value bwd_mean = tape.scale(tape.add_n(bwds), inv_obs);
  terms.final_mean = tape.val(final_mean)[0];
  terms.fwd_mean = tape.val(fwd_mean)[0];
  terms.bwd_mean = tape.val(bwd_mean)[0];

  std::vector<Value> weighted;
  weighted.push_back(final_mean);
  if (cfg.lambda > 0.0) {
    weighted.push_back(tape.scale(tape.add(fwd_mean, bwd_mean), cfg.lambda));
  }

  if (bank && bank->initialized && !cfg.disable_prototypes) {
    Value P = bind("prototypes.P");
    if (cfg.lambda_s2p > 0.0 || cfg.lambda_p2s > 0.0) {
      // Gradient-detached representations: only the bank learns from these.
      Tensor S;
      if (frozen_reps) {
        S = *frozen_reps;
      } else {
        S = Tensor({total_steps, mc.d});
        std::size_t row = 0;
        for (const SeriesForward& sf : outs) {
          const Tensor& H = tape.val(sf.H);
          for (std::size_t t = 0; t < H.rows(); ++t, ++row) {
            for (std::size_t k = 0; k < mc.d; ++k) S(row, k) = H(t, k);
          }
        }
      }
      ClusterLosses cl = loss_cluster(tape, *bank, P, S);
      terms.s_to_p = tape.val(cl.s_to_p)[0];
      terms.p_to_s = tape.val(cl.p_to_s)[0];
      if (cfg.lambda_s2p > 0.0) weighted.push_back(tape.scale(cl.s_to_p, cfg.lambda_s2p));
      if (cfg.lambda_p2s > 0.0) weighted.push_back(tape.scale(cl.p_to_s, cfg.lambda_p2s));
    }
    if (cfg.lambda_sep > 0.0) {
      Value sep = loss_separation(tape, *bank, P);
      terms.sep = tape.val(sep)[0];
      weighted.push_back(tape.scale(sep, cfg.lambda_sep));
    }
  }
  terms.total = tape.add_n(weighted);
  return terms;
}

namespace {

MetricReport validate_split(ParamStore& store, const ModelConfig& mc, bool prototypes_active,
                            const SeriesSet& original, const SeriesSet& blinded,
                            const EvalSplit& eval_split, const std::vector<std::size_t>& indices) {
  std::vector<Tensor> preds;
  std::vector<const Series*> truth;
  std::vector<const Tensor*> masks;
  for (std::size_t idx : indices) {
    preds.push_back(impute_series(store, mc, prototypes_active, blinded.series[idx]));
    truth.push_back(&original.series[idx]);
    masks.push_back(&eval_split.eval_mask[idx]);
  }
  return evaluate_imputation(preds, truth, masks);
}

}  // namespace

FitResult fit(const SeriesSet& normalized, const SplitIndices& split, const EvalSplit& eval_split,
              const TrainConfig& cfg) {
  cfg.validate();
  if (normalized.empty() || split.train.empty()) {
    throw std::invalid_argument("fit: empty training set");
  }
  std::size_t N = normalized.n_features();
  ModelConfig mc = cfg.model_config(N);

  SeriesSet blinded = blind(normalized, eval_split);
  std::vector<SeriesTensors> tensors;
  tensors.reserve(blinded.series.size());
  for (const Series& s : blinded.series) tensors.push_back(prepare_series(s));

  Rng rng(cfg.seed);
  FitResult res;
  res.model = mc;
  res.params = ParamStore(true);
  register_model_params(res.params, mc, rng);
  ParamStore& store = res.params;

  // Warmup representations -> k-means prototype init. The reservoir owns a
  // derived stream so the main draw sequence (shuffles) is identical with
  // and without prototypes.
  if (!cfg.disable_prototypes) {
    constexpr std::size_t kReservoirCap = 50000;
    Rng reservoir_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<Tensor> reservoir;
    reservoir.reserve(std::min<std::size_t>(kReservoirCap, 4096));
    std::size_t seen = 0;
    for (std::size_t idx : split.train) {
      Tape tape(false);
      TapeBind bind(tape, store);
      ModelRefs refs = bind_model(bind, mc, false);
      SeriesForward sf = run_series(tape, refs, mc, tensors[idx]);
      const Tensor& H = tape.val(sf.H);
      for (std::size_t t = 0; t < H.rows(); ++t) {
        Tensor row({mc.d});
        for (std::size_t k = 0; k < mc.d; ++k) row[k] = H(t, k);
        ++seen;
        if (reservoir.size() < kReservoirCap) {
          reservoir.push_back(std::move(row));
        } else {
          std::size_t j = static_cast<std::size_t>(reservoir_rng.below(seen));
          if (j < kReservoirCap) reservoir[j] = std::move(row);
        }
      }
    }
    Tensor S({reservoir.size(), mc.d});
    for (std::size_t i = 0; i < reservoir.size(); ++i)
      for (std::size_t k = 0; k < mc.d; ++k) S(i, k) = reservoir[i][k];
    res.bank = init_prototypes_kmeans(S, cfg.K, cfg.seed, 100, cfg.margin);
    store.add("prototypes.P", res.bank.P);
    res.bank.P = store.value("prototypes.P");  // post-quantization view
  }

  Adam adam(cfg.learning_rate);
  std::vector<std::size_t> order(split.train);
  bool have_snapshot = false;
  ParamStore best = store;
  std::size_t best_epoch = 0;
  bool best_active = false;
  double best_mse = std::numeric_limits<double>::infinity();
  double best_mae = std::numeric_limits<double>::infinity();

  auto proto_active_at = [&](std::size_t epoch) {
    return !cfg.disable_prototypes && res.bank.initialized && epoch >= cfg.prototype_start_epoch;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs && !res.aborted_non_finite; ++epoch) {
    bool active = proto_active_at(epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const SeriesTensors*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&tensors[order[i]]);
      }
      Tape tape(true);
      TapeBind bind(tape, store);
      double loss;
      try {
        BatchLossTerms terms = build_batch_loss(tape, bind, mc, cfg, batch, active,
                                                res.bank.initialized ? &res.bank : nullptr);
        loss = tape.val(terms.total)[0];
        if (std::isfinite(loss)) {
          store.zero_grad();
          tape.backward(terms.total);
          bind.harvest();
        }
      } catch (const NonFiniteError&) {
        loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss)) {
        res.aborted_non_finite = true;
        break;
      }
      adam.step(store);
      zero_feature_reg_diagonal(store);
      store.quantize_values();
      loss_sum += loss;
      ++n_batches;
    }
    if (res.aborted_non_finite) break;

    MetricReport val;
    try {
      val = validate_split(store, mc, active, normalized, blinded, eval_split, split.val);
    } catch (const NonFiniteError&) {
      res.aborted_non_finite = true;
      break;
    }
    res.history.push_back(
        {epoch, n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0, val.mse, val.mae});
    if (val.mse < best_mse) {
      best = store;
      best_mse = val.mse;
      best_mae = val.mae;
      best_epoch = epoch;
      best_active = active;
      have_snapshot = true;
    }
  }

  if (!have_snapshot) {
    // Zero-epoch runs and immediate aborts fall back to the current state.
    bool active = proto_active_at(0);
    best = store;
    best_epoch = 0;
    best_active = active;
    try {
      MetricReport val = validate_split(store, mc, active, normalized, blinded, eval_split,
                                        split.val);
      best_mse = val.mse;
      best_mae = val.mae;
    } catch (const NonFiniteError&) {
      best_mse = std::numeric_limits<double>::quiet_NaN();
      best_mae = std::numeric_limits<double>::quiet_NaN();
    }
  }

  res.params = std::move(best);
  res.best_epoch = best_epoch;
  res.best_val_mse = best_mse;
  res.best_val_mae = best_mae;
  res.best_prototypes_active = best_active;
  if (res.bank.initialized) res.bank.P = res.params.value("prototypes.P");
  return res;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history file " + path);
  out << "epoch,train_loss,val_mse,val_mae\n";
  char buf[128];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_mse,
                  e.val_mae);
    out << buf;
  }
}

namespace {

json config_to_json(const TrainConfig& c) {
  json j;
  j["d"] = c.d;
  j["K"] = c.K;
  j["lambda"] = c.lambda;
  j["lambda_s2p"] = c.lambda_s2p;
  j["lambda_p2s"] = c.lambda_p2s;
  j["lambda_sep"] = c.lambda_sep;
  j["margin"] = c.margin;
  j["d_mlp"] = c.d_mlp;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["prototype_start_epoch"] = c.prototype_start_epoch;
  j["disable_prototypes"] = c.disable_prototypes;
  j["disable_refinement"] = c.disable_refinement;
  j["holdout_rate"] = c.holdout_rate;
  j["gelu_form"] = c.gelu_form;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.K = j.at("K").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.lambda_s2p = j.at("lambda_s2p").get<double>();
  c.lambda_p2s = j.at("lambda_p2s").get<double>();
  c.lambda_sep = j.at("lambda_sep").get<double>();
  c.margin = j.at("margin").get<double>();
  c.d_mlp = j.at("d_mlp").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.prototype_start_epoch = j.at("prototype_start_epoch").get<std::size_t>();
  c.disable_prototypes = j.at("disable_prototypes").get<bool>();
  c.disable_refinement = j.at("disable_refinement").get<bool>();
  c.holdout_rate = j.at("holdout_rate").get<double>();
  c.gelu_form = j.at("gelu_form").get<std::string>();
  return c;
}

void write_param_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write parameter file " + path);
  std::vector<float> buf(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed for parameter file " + path);
}

Tensor read_param_file(const std::string& path, const std::vector<std::size_t>& shape,
                       const std::string& name) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("checkpoint load: missing array for parameter " + name);
  std::size_t numel = 1;
  for (std::size_t s : shape) numel *= s;
  if (shape.empty()) numel = 0;
  std::size_t bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != numel * sizeof(float)) {
    throw std::runtime_error("checkpoint load: corrupted array length for parameter " + name +
                             " (expected " + std::to_string(numel * sizeof(float)) + " bytes, got " +
                             std::to_string(bytes) + ")");
  }
  in.seekg(0);
  std::vector<float> buf(numel);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("checkpoint load: read failed for parameter " + name);
  Tensor t(shape);
  for (std::size_t i = 0; i < numel; ++i) t[i] = static_cast<double>(buf[i]);
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "prime-checkpoint";
  manifest["version"] = ckpt.version;
  manifest["precision"] = ckpt.precision;
  manifest["gelu_form"] = ckpt.config.gelu_form;
  manifest["config"] = config_to_json(ckpt.config);
  manifest["feature_names"] = ckpt.feature_names;
  json stats = json::object();
  for (std::size_t i = 0; i < ckpt.feature_names.size(); ++i) {
    stats[ckpt.feature_names[i]] = {{"mean", ckpt.stats.mean[i]}, {"std", ckpt.stats.stddev[i]}};
  }
  manifest["norm_stats"] = stats;
  manifest["prototypes"] = {{"K", ckpt.bank.K},
                            {"d", ckpt.bank.d},
                            {"margin", ckpt.bank.margin},
                            {"initialized", ckpt.bank.initialized}};
  manifest["best_epoch"] = ckpt.best_epoch;
  manifest["metrics"] = {{"val_mse", ckpt.val_mse}, {"val_mae", ckpt.val_mae}};

  json params = json::object();
  for (const std::string& name : ckpt.params.names()) {
    const Tensor& t = ckpt.params.value(name);
    std::string file = name + ".bin";
    params[name] = {{"shape", t.shape()}, {"file", file}};
    write_param_file((fs::path(dir) / file).string(), t);
  }
  manifest["params"] = params;

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for manifest in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint load: cannot open manifest in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint load: malformed manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "prime-checkpoint") {
    throw std::runtime_error("checkpoint load: not a checkpoint manifest");
  }
  Checkpoint ckpt;
  if (manifest.at("version").get<int>() != ckpt.version) {
    throw std::runtime_error("checkpoint load: version mismatch (file has " +
                             manifest.at("version").dump() + ", expected " +
                             std::to_string(ckpt.version) + ")");
  }
  ckpt.precision = manifest.at("precision").get<std::string>();
  ckpt.config = config_from_json(manifest.at("config"));
  ckpt.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
  const json& stats = manifest.at("norm_stats");
  for (const std::string& name : ckpt.feature_names) {
    ckpt.stats.mean.push_back(stats.at(name).at("mean").get<double>());
    ckpt.stats.stddev.push_back(stats.at(name).at("std").get<double>());
  }
  const json& proto = manifest.at("prototypes");
  ckpt.bank.K = proto.at("K").get<std::size_t>();
  ckpt.bank.d = proto.at("d").get<std::size_t>();
  ckpt.bank.margin = proto.at("margin").get<double>();
  ckpt.bank.initialized = proto.at("initialized").get<bool>();
  ckpt.best_epoch = manifest.at("best_epoch").get<std::size_t>();
  ckpt.val_mse = manifest.at("metrics").at("val_mse").get<double>();
  ckpt.val_mae = manifest.at("metrics").at("val_mae").get<double>();

  ckpt.params = ParamStore(ckpt.precision == "f32");
  for (const auto& [name, meta] : manifest.at("params").items()) {
    auto shape = meta.at("shape").get<std::vector<std::size_t>>();
    std::string file = meta.at("file").get<std::string>();
    ckpt.params.add(name, read_param_file((fs::path(dir) / file).string(), shape, name));
  }
  if (ckpt.bank.initialized) {
    if (!ckpt.params.has("prototypes.P")) {
      throw std::runtime_error("checkpoint load: missing prototypes.P array");
    }
    ckpt.bank.P = ckpt.params.value("prototypes.P");
  }
  return ckpt;
}

bool checkpoint_prototypes_active(const Checkpoint& ckpt) {
  return !ckpt.config.disable_prototypes && ckpt.bank.initialized &&
         ckpt.best_epoch >= ckpt.config.prototype_start_epoch;
}

Checkpoint make_checkpoint(const FitResult& fit_result, const TrainConfig& cfg,
                           const std::vector<std::string>& feature_names, const NormStats& stats) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.feature_names = feature_names;
  ckpt.stats = stats;
  ckpt.bank = fit_result.bank;
  ckpt.params = fit_result.params;
  ckpt.best_epoch = fit_result.best_epoch;
  ckpt.val_mse = fit_result.best_val_mse;
  ckpt.val_mae = fit_result.best_val_mae;
  ckpt.precision = fit_result.params.quantize_f32() ? "f32" : "f64";
  return ckpt;
}

}  // namespace prime
