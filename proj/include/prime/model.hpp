#pragma once

#include <cstdint>
#include <vector>

#include "prime/data.hpp"
#include "prime/param_store.hpp"
#include "prime/prototype_memory.hpp"
#include "prime/rng.hpp"
#include "prime/tape.hpp"
#include "prime/tape_bind.hpp"

namespace prime {

struct ModelConfig {
  std::size_t n_features = 0;
  std::size_t d = 128;
  std::size_t d_mlp = 0;  // 0 -> d
  bool disable_prototypes = false;
  bool disable_refinement = false;
  Activation gelu_form = Activation::GeluExact;

  std::size_t mlp_width() const { return d_mlp ? d_mlp : d; }
};

// Registers every learnable tensor except the prototype bank (added once
// k-means runs). Two fully separate parameter sets per direction.
void register_model_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Structural constraint on the cross-feature regression: no
// self-regression. Re-applied after every optimizer step.
void zero_feature_reg_diagonal(ParamStore& store);

// Per-series input grids in both processing orders, built from a training
// view of the series (mask already blinded when applicable).
struct SeriesTensors {
  std::size_t T = 0;
  double obs_count = 0.0;
  Tensor x, m;              // [T x N], forward order
  Tensor x_rev, m_rev;      // reversed row order
  Tensor delta_fwd;         // time gaps in forward order
  Tensor delta_bwd;         // time gaps of the reversed series, reversed order
};

SeriesTensors prepare_series(const Series& s);

struct DirRefs {
  Value W_delta, W_h, W_f;
  Value Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn;
  Value Vk, Wk, Uk, W_alpha;
  Value WP, UP;  // P W_k^T and P U_k^T, precomputed per tape
};

struct ModelRefs {
  DirRefs fwd, bwd;
  Value W_bi;
  Value Vzeta, Wzeta, Uzeta;
  Value Vxi, Wxi, Uxi;
  Value mlp_W1, mlp_W2;
  Value P;
  bool prototypes_active = false;
};

// Binds store parameters onto the tape. prototypes_active additionally
// requires the "prototypes.P" entry.
ModelRefs bind_model(TapeBind& bind, const ModelConfig& cfg, bool prototypes_active);

// Values recorded per forward-direction step for invariant checks.
struct StepTrace {
  Tensor decay;   // in (0, 1]^d
  Tensor kappa;   // attention over prototypes (empty when inactive)
  Tensor alpha;   // fusion gate (empty when inactive)
  Tensor xh, xf;  // merged step imputations
};

struct SeriesForward {
  Value H;         // [T x d] fused bidirectional representation
  Value Hstar;     // [T x d] refined-prototype representation (zeros when inactive)
  Value xhat;      // [T x N] final imputation, all positions
  Value sq_fwd;    // sum over observed entries, both step predictions, forward
  Value sq_bwd;
  Value sq_final;  // sum over observed entries of (x - xhat)^2
  Value zeta, xi;  // attention maps when refinement ran (invalid otherwise)
  std::vector<Value> h_fwd, h_bwd;  // per-step states, processing order
};

SeriesForward run_series(Tape& tape, const ModelRefs& refs, const ModelConfig& cfg,
                         const SeriesTensors& st, std::vector<StepTrace>* fwd_trace = nullptr);

// Inference-only imputation: final model output in normalized space.
Tensor impute_series(ParamStore& store, const ModelConfig& cfg, bool prototypes_active,
                     const Series& s);

}  // namespace prime
