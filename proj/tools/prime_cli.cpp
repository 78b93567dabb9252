#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prime/data.hpp"
#include "prime/metrics.hpp"
#include "prime/model.hpp"
#include "prime/sweep.hpp"
#include "prime/training.hpp"

namespace {

using namespace prime;
using nlohmann::json;

std::size_t worker_count() {
  const char* env = std::getenv("PRIME_THREADS");
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed config file " + path + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "d") cfg.d = value.get<std::size_t>();
    else if (key == "K") cfg.K = value.get<std::size_t>();
    else if (key == "lambda") cfg.lambda = value.get<double>();
    else if (key == "lambda_s2p") cfg.lambda_s2p = value.get<double>();
    else if (key == "lambda_p2s") cfg.lambda_p2s = value.get<double>();
    else if (key == "lambda_sep") cfg.lambda_sep = value.get<double>();
    else if (key == "margin") cfg.margin = value.get<double>();
    else if (key == "d_mlp") cfg.d_mlp = value.get<std::size_t>();
    else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
    else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
    else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "prototype_start_epoch") cfg.prototype_start_epoch = value.get<std::size_t>();
    else if (key == "disable_prototypes") cfg.disable_prototypes = value.get<bool>();
    else if (key == "disable_refinement") cfg.disable_refinement = value.get<bool>();
    else if (key == "holdout_rate") cfg.holdout_rate = value.get<double>();
    else if (key == "gelu_form") cfg.gelu_form = value.get<std::string>();
    else throw std::runtime_error("unknown config key '" + key + "' in " + path);
  }
}

// Registers the TrainConfig surface on a subcommand. Flag names mirror the
// config fields; explicit flags override config-file values.
struct ConfigFlags {
  TrainConfig cfg;
  std::string config_path;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--d", cfg.d, "hidden size");
    cmd->add_option("--k", cfg.K, "prototype count");
    cmd->add_option("--lambda", cfg.lambda, "per-direction step loss weight");
    cmd->add_option("--lambda-s2p", cfg.lambda_s2p, "representation-to-prototype loss weight");
    cmd->add_option("--lambda-p2s", cfg.lambda_p2s, "prototype-to-representation loss weight");
    cmd->add_option("--lambda-sep", cfg.lambda_sep, "prototype separation loss weight");
    cmd->add_option("--margin", cfg.margin, "separation margin (0 selects 50/sqrt(K))");
    cmd->add_option("--d-mlp", cfg.d_mlp, "imputation head width (0 selects d)");
    cmd->add_option("--batch-size", cfg.batch_size, "series per batch");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--learning-rate", cfg.learning_rate, "Adam learning rate");
    cmd->add_option("--seed", cfg.seed, "seed for every random choice");
    cmd->add_option("--prototype-start-epoch", cfg.prototype_start_epoch,
                    "epoch at which prototype attention and refinement activate");
    cmd->add_flag("--disable-prototypes", cfg.disable_prototypes,
                  "train without the prototype bank");
    cmd->add_flag("--disable-refinement", cfg.disable_refinement,
                  "attend over raw prototypes instead of refined ones");
    cmd->add_option("--holdout-rate", cfg.holdout_rate, "fraction of observations held out");
    cmd->add_option("--gelu-form", cfg.gelu_form, "gelu variant: exact | tanh");
  }

  // Precedence: defaults < config file < explicit flags.
  TrainConfig resolve(CLI::App* cmd) {
    if (config_path.empty()) return cfg;
    TrainConfig merged;
    apply_config_file(merged, config_path);
    auto take = [&](const std::string& flag, auto member) {
      if (cmd->count(flag) > 0) merged.*member = cfg.*member;
    };
    take("--d", &TrainConfig::d);
    take("--k", &TrainConfig::K);
    take("--lambda", &TrainConfig::lambda);
    take("--lambda-s2p", &TrainConfig::lambda_s2p);
    take("--lambda-p2s", &TrainConfig::lambda_p2s);
    take("--lambda-sep", &TrainConfig::lambda_sep);
    take("--margin", &TrainConfig::margin);
    take("--d-mlp", &TrainConfig::d_mlp);
    take("--batch-size", &TrainConfig::batch_size);
    take("--epochs", &TrainConfig::epochs);
    take("--learning-rate", &TrainConfig::learning_rate);
    take("--seed", &TrainConfig::seed);
    take("--prototype-start-epoch", &TrainConfig::prototype_start_epoch);
    take("--disable-prototypes", &TrainConfig::disable_prototypes);
    take("--disable-refinement", &TrainConfig::disable_refinement);
    take("--holdout-rate", &TrainConfig::holdout_rate);
    take("--gelu-form", &TrainConfig::gelu_form);
    return merged;
  }
};

SeriesSet load_events(const std::string& data_path, const std::string& variables_path) {
  std::vector<std::string> declared;
  if (!variables_path.empty()) declared = read_variables_file(variables_path);
  std::size_t duplicates = 0;
  SeriesSet set = parse_events(data_path, declared, &duplicates);
  if (duplicates > 0) {
    std::cerr << "warning: " << duplicates << " duplicate observations resolved last-wins\n";
  }
  return set;
}

void write_norm_stats(const SeriesSet& set, const NormStats& stats, const std::string& path) {
  json j = json::object();
  for (std::size_t i = 0; i < set.feature_names.size(); ++i) {
    j[set.feature_names[i]] = {{"mean", stats.mean[i]}, {"std", stats.stddev[i]}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stats file " + path);
  out << j.dump(2) << "\n";
}

void write_metric_csv(const std::string& path, const std::string& axis, const std::string& value,
                      std::uint64_t seed, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report file " + path);
  char buf[192];
  out << "axis,value,seed,mse,mae,n_points\n";
  std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.17g,%.17g,%zu\n", axis.c_str(), value.c_str(),
                static_cast<unsigned long long>(seed), r.mse, r.mae, r.n_eval_points);
  out << buf;
}

int run_synth(const SynthConfig& cfg, const std::string& out_path) {
  SeriesSet set = synth_generate(cfg);
  write_events_csv(set, out_path);
  std::cout << "wrote " << set.series.size() << " series, " << set.total_observed()
            << " observations to " << out_path << "\n";
  return 0;
}

int run_train(const TrainConfig& cfg, const std::string& data_path,
              const std::string& variables_path, const std::string& out_dir,
              std::string history_path) {
  SeriesSet set = load_events(data_path, variables_path);
  if (set.empty()) throw std::runtime_error("no series in " + data_path);
  NormStats stats = normalize(set);
  SplitIndices split = split_series(set.series.size(), cfg.seed);
  EvalSplit eval = holdout_mask(set, cfg.holdout_rate, cfg.seed);
  FitResult res = fit(set, split, eval, cfg);

  std::filesystem::create_directories(out_dir);
  Checkpoint ckpt = make_checkpoint(res, cfg, set.feature_names, stats);
  save_checkpoint(ckpt, out_dir);
  if (history_path.empty()) {
    history_path = (std::filesystem::path(out_dir) / "history.csv").string();
  }
  write_history_csv(res.history, history_path);
  write_norm_stats(set, stats, (std::filesystem::path(out_dir) / "norm_stats.json").string());

  // Test-split metrics under the same hold-out.
  SeriesSet blinded = blind(set, eval);
  std::vector<Tensor> preds;
  std::vector<const Series*> truth;
  std::vector<const Tensor*> masks;
  for (std::size_t idx : split.test) {
    preds.push_back(
        impute_series(res.params, res.model, res.best_prototypes_active, blinded.series[idx]));
    truth.push_back(&set.series[idx]);
    masks.push_back(&eval.eval_mask[idx]);
  }
  MetricReport test = evaluate_imputation(preds, truth, masks);
  if (res.aborted_non_finite) {
    std::cerr << "warning: training aborted on non-finite loss; kept last finite snapshot\n";
  }
  std::printf("trained %zu epochs; best epoch %zu val mse %.6f mae %.6f; test mse %.6f mae %.6f\n",
              res.history.size(), res.best_epoch, res.best_val_mse, res.best_val_mae, test.mse,
              test.mae);
  std::cout << "checkpoint written to " << out_dir << "\n";
  return 0;
}

int run_impute(const std::string& ckpt_dir, const std::string& data_path,
               const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_dir);
  SeriesSet set = parse_events(data_path, ckpt.feature_names);
  if (set.empty()) throw std::runtime_error("no series in " + data_path);
  SeriesSet normalized = set;
  apply_normalization(normalized, ckpt.stats);
  ModelConfig mc = ckpt.config.model_config(ckpt.feature_names.size());
  bool active = checkpoint_prototypes_active(ckpt);

  SeriesSet out = set;
  for (std::size_t si = 0; si < set.series.size(); ++si) {
    Tensor pred = impute_series(ckpt.params, mc, active, normalized.series[si]);
    Series& s = out.series[si];
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t n = 0; n < s.n_features(); ++n) {
        if (s.mask(t, n) > 0.5) continue;  // observed values pass through
        s.values(t, n) = pred(t, n) * ckpt.stats.stddev[n] + ckpt.stats.mean[n];
        s.mask(t, n) = 1.0;  // emit the filled grid
      }
    }
  }
  write_events_csv(out, out_path);
  std::cout << "imputed " << out.series.size() << " series to " << out_path << "\n";
  return 0;
}

int run_evaluate(const std::string& ckpt_dir, const std::string& data_path, std::uint64_t seed,
                 double rate, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_dir);
  SeriesSet set = parse_events(data_path, ckpt.feature_names);
  if (set.empty()) throw std::runtime_error("no series in " + data_path);
  apply_normalization(set, ckpt.stats);
  EvalSplit eval = holdout_mask(set, rate, seed);
  SeriesSet blinded = blind(set, eval);
  ModelConfig mc = ckpt.config.model_config(ckpt.feature_names.size());
  bool active = checkpoint_prototypes_active(ckpt);

  std::vector<Tensor> preds;
  std::vector<const Series*> truth;
  std::vector<const Tensor*> masks;
  for (std::size_t si = 0; si < set.series.size(); ++si) {
    preds.push_back(impute_series(ckpt.params, mc, active, blinded.series[si]));
    truth.push_back(&set.series[si]);
    masks.push_back(&eval.eval_mask[si]);
  }
  MetricReport r = evaluate_imputation(preds, truth, masks);
  char rate_str[32];
  std::snprintf(rate_str, sizeof(rate_str), "%g", rate);
  if (!out_path.empty()) write_metric_csv(out_path, "holdout", rate_str, seed, r);
  std::printf("mse %.6f mae %.6f over %zu held-out points\n", r.mse, r.mae, r.n_eval_points);
  return 0;
}

int run_sweep(const TrainConfig& base, const std::string& data_path,
              const std::string& variables_path, const std::string& axis_name,
              const std::string& values_csv, const std::string& seeds_csv,
              const std::string& out_path) {
  SeriesSet raw = load_events(data_path, variables_path);
  if (raw.empty()) throw std::runtime_error("no series in " + data_path);
  SweepAxis axis = sweep_axis_from_string(axis_name);
  std::vector<std::string> values = split_list(values_csv);
  std::vector<std::uint64_t> seeds;
  for (const std::string& s : split_list(seeds_csv)) seeds.push_back(std::stoull(s));
  SweepTable table = sweep(axis, values, raw, base, seeds, worker_count());
  write_sweep_csv(table, out_path);
  for (const auto& [mean, stddev] : table.aggregates) {
    std::printf("%s=%s mse %.6f +- %.6f mae %.6f +- %.6f\n", mean.axis.c_str(),
                mean.value.c_str(), mean.mse, stddev.mse, mean.mae, stddev.mae);
  }
  std::cout << "sweep table written to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototype-augmented recurrent imputation for irregular time series"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic event file");
  SynthConfig scfg;
  std::string synth_out;
  synth->add_option("--n-series", scfg.n_series, "series count");
  synth->add_option("--n-features", scfg.n_features, "feature count");
  synth->add_option("--t-min", scfg.t_min, "minimum steps per series");
  synth->add_option("--t-max", scfg.t_max, "maximum steps per series");
  synth->add_option("--obs-rate", scfg.obs_rate, "observation probability per entry");
  synth->add_option("--seed", scfg.seed, "generator seed");
  synth->add_option("--out", synth_out, "output event CSV")->required();

  auto* train = app.add_subcommand("train", "train a model on an event file");
  ConfigFlags train_cfg;
  std::string train_data, train_vars, train_out, train_history;
  train->add_option("--data", train_data, "event CSV")->required();
  train->add_option("--variables", train_vars, "sidecar variable list (one per line)");
  train->add_option("--out", train_out, "checkpoint directory")->required();
  train->add_option("--history", train_history, "history CSV path (default <out>/history.csv)");
  train_cfg.attach(train);

  auto* impute = app.add_subcommand("impute", "fill missing values with a trained model");
  std::string imp_ckpt, imp_data, imp_out;
  impute->add_option("--checkpoint", imp_ckpt, "checkpoint directory")->required();
  impute->add_option("--data", imp_data, "event CSV")->required();
  impute->add_option("--out", imp_out, "output event CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score a model on seeded hold-out masking");
  std::string ev_ckpt, ev_data, ev_out;
  std::uint64_t ev_seed = 1;
  double ev_rate = 0.1;
  evaluate->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
  evaluate->add_option("--data", ev_data, "event CSV")->required();
  evaluate->add_option("--seed", ev_seed, "hold-out mask seed");
  evaluate->add_option("--rate", ev_rate, "hold-out fraction");
  evaluate->add_option("--out", ev_out, "metric report CSV");

  auto* sweep_cmd = app.add_subcommand("sweep", "fit and evaluate across an axis of settings");
  ConfigFlags sweep_cfg;
  std::string sw_data, sw_vars, sw_axis, sw_values, sw_seeds, sw_out;
  sweep_cmd->add_option("--data", sw_data, "event CSV")->required();
  sweep_cmd->add_option("--variables", sw_vars, "sidecar variable list");
  sweep_cmd
      ->add_option("--axis", sw_axis,
                   "observation-rate | prototype-count | prototype-start-epoch | loss-ablation")
      ->required();
  sweep_cmd->add_option("--values", sw_values, "comma-separated axis values")->required();
  sweep_cmd->add_option("--seeds", sw_seeds, "comma-separated seeds")->required();
  sweep_cmd->add_option("--out", sw_out, "output CSV")->required();
  sweep_cfg.attach(sweep_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return run_synth(scfg, synth_out);
    if (train->parsed()) {
      return run_train(train_cfg.resolve(train), train_data, train_vars, train_out, train_history);
    }
    if (impute->parsed()) return run_impute(imp_ckpt, imp_data, imp_out);
    if (evaluate->parsed()) return run_evaluate(ev_ckpt, ev_data, ev_seed, ev_rate, ev_out);
    if (sweep_cmd->parsed()) {
      return run_sweep(sweep_cfg.resolve(sweep_cmd), sw_data, sw_vars, sw_axis, sw_values,
                       sw_seeds, sw_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
