#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "prime/data.hpp"
#include "prime/model.hpp"
#include "prime/param_store.hpp"
#include "prime/prototype_memory.hpp"

namespace prime {

struct TrainConfig {
  std::size_t d = 128;
  std::size_t K = 64;
  double lambda = 0.3;       // weight of the per-direction step losses
  double lambda_s2p = 1.0;   // representations -> prototypes
  double lambda_p2s = 0.1;   // prototypes -> representations (one-to-one)
  double lambda_sep = 0.1;   // prototype separation hinge
  double margin = 0.0;       // 0 -> 50/sqrt(K)
  std::size_t d_mlp = 0;     // 0 -> d
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  std::size_t prototype_start_epoch = 0;
  bool disable_prototypes = false;
  bool disable_refinement = false;
  double holdout_rate = 0.1;
  std::string gelu_form = "exact";  // "exact" | "tanh"

  double resolved_margin() const;
  ModelConfig model_config(std::size_t n_features) const;
  void validate() const;
};

// Adam with bias correction; one shared step counter across parameters.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& store);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state_;  // name -> (m, v)
};

struct BatchLossTerms {
  Value total;
  double final_mean = 0.0, fwd_mean = 0.0, bwd_mean = 0.0;
  double s_to_p = 0.0, p_to_s = 0.0, sep = 0.0;
  double obs_count = 0.0;
};

// Full objective over one batch: masked means of the final and per-direction
// step errors, plus prototype losses on gradient-detached representations.
// `bank` may be null (prototypes disabled); cluster/separation terms run
// whenever the bank exists, regardless of prototypes_active.
//
// frozen_reps substitutes a fixed representation matrix for the cluster
// losses. Finite-difference checks need it: the detached representations
// must stay pinned at the base point or the differences would measure the
// very path the stop-gradient removes.
BatchLossTerms build_batch_loss(Tape& tape, TapeBind& bind, const ModelConfig& mc,
                                const TrainConfig& cfg,
                                const std::vector<const SeriesTensors*>& batch,
                                bool prototypes_active, const PrototypeBank* bank,
                                const Tensor* frozen_reps = nullptr);

// Detached per-step representations of a batch under the current
// parameters, stacked into [sum(T) x d].
Tensor collect_batch_representations(ParamStore& store, const ModelConfig& mc,
                                     const std::vector<const SeriesTensors*>& batch,
                                     bool prototypes_active);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct FitResult {
  ParamStore params;  // best-validation snapshot
  PrototypeBank bank;
  ModelConfig model;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::infinity();
  double best_val_mae = std::numeric_limits<double>::infinity();
  bool best_prototypes_active = false;
  bool aborted_non_finite = false;
};

// Trains on the training split of `normalized` (blinded by `eval_split`),
// selects the epoch with the lowest validation MSE, and returns that
// snapshot. Warmup pass -> k-means prototype init -> Adam epochs; prototype
// attention and refinement activate at prototype_start_epoch while the
// prototype losses run throughout.
FitResult fit(const SeriesSet& normalized, const SplitIndices& split, const EvalSplit& eval_split,
              const TrainConfig& cfg);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

struct Checkpoint {
  int version = 1;
  TrainConfig config;
  std::vector<std::string> feature_names;
  NormStats stats;
  PrototypeBank bank;
  ParamStore params;
  std::size_t best_epoch = 0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  std::string precision = "f32";
};

// Directory layout: manifest.json plus one raw little-endian float32 array
// per named parameter.
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

// Whether a loaded model runs with prototype attention and refinement.
bool checkpoint_prototypes_active(const Checkpoint& ckpt);

Checkpoint make_checkpoint(const FitResult& fit_result, const TrainConfig& cfg,
                           const std::vector<std::string>& feature_names, const NormStats& stats);

}  // namespace prime
