#include "prime/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace prime {

namespace {
const char* kDirNames[2] = {"fwd", "bwd"};

void register_direction(ParamStore& store, const std::string& dir, std::size_t N, std::size_t d,
                        Rng& rng) {
  store.add_xavier(dir + ".W_delta", d, N, rng);
  store.add_xavier(dir + ".W_h", N, d, rng);
  Tensor& wf = store.add_xavier(dir + ".W_f", N, N, rng);
  for (std::size_t i = 0; i < N; ++i) wf(i, i) = 0.0;
  store.add_xavier(dir + ".gru.W_z", d, 2 * N, rng);
  store.add_xavier(dir + ".gru.W_r", d, 2 * N, rng);
  store.add_xavier(dir + ".gru.W_n", d, 2 * N, rng);
  store.add_xavier(dir + ".gru.U_z", d, d, rng);
  store.add_xavier(dir + ".gru.U_r", d, d, rng);
  store.add_xavier(dir + ".gru.U_n", d, d, rng);
  store.add(dir + ".gru.b_z", Tensor::zeros(d));
  store.add(dir + ".gru.b_r", Tensor::zeros(d));
  store.add(dir + ".gru.b_n", Tensor::zeros(d));
  store.add_xavier(dir + ".attn.V", d, d, rng);
  store.add_xavier(dir + ".attn.W", d, d, rng);
  store.add_xavier(dir + ".attn.U", d, d, rng);
  store.add_xavier(dir + ".W_alpha", d, 2 * d, rng);
}

DirRefs bind_direction(TapeBind& bind, const std::string& dir) {
  DirRefs r;
  r.W_delta = bind(dir + ".W_delta");
  r.W_h = bind(dir + ".W_h");
  r.W_f = bind(dir + ".W_f");
  r.Wz = bind(dir + ".gru.W_z");
  r.Wr = bind(dir + ".gru.W_r");
  r.Wn = bind(dir + ".gru.W_n");
  r.Uz = bind(dir + ".gru.U_z");
  r.Ur = bind(dir + ".gru.U_r");
  r.Un = bind(dir + ".gru.U_n");
  r.bz = bind(dir + ".gru.b_z");
  r.br = bind(dir + ".gru.b_r");
  r.bn = bind(dir + ".gru.b_n");
  r.Vk = bind(dir + ".attn.V");
  r.Wk = bind(dir + ".attn.W");
  r.Uk = bind(dir + ".attn.U");
  r.W_alpha = bind(dir + ".W_alpha");
  return r;
}

Tensor row_of(const Tensor& M, std::size_t i) {
  std::size_t n = M.cols();
  Tensor out({n});
  for (std::size_t j = 0; j < n; ++j) out[j] = M(i, j);
  return out;
}

Tensor reverse_rows(const Tensor& M) {
  std::size_t r = M.rows(), c = M.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = M(r - 1 - i, j);
  return out;
}

struct DirOutputs {
  std::vector<Value> h;  // per processing step
  Value sq_sum;          // scalar
};

// One direction of the recurrent pass over steps already laid out in
// processing order.
DirOutputs run_direction(Tape& tape, const DirRefs& p, bool prototypes_active, std::size_t d,
                         double inv_sqrt_d, const Tensor& x, const Tensor& m,
                         const Tensor& delta, std::vector<StepTrace>* trace) {
  std::size_t T = x.rows();
  DirOutputs out;
  out.h.reserve(T);
  std::vector<Value> sq_terms;
  sq_terms.reserve(2 * T);

  Value h_prev = tape.constant(Tensor::zeros(d));
  for (std::size_t t = 0; t < T; ++t) {
    Tensor x_t = row_of(x, t);
    Tensor m_t = row_of(m, t);

    // Temporal decay of the carried state.
    Value decay = tape.exp_neg_relu(tape.matvec(p.W_delta, tape.constant(row_of(delta, t))));
    Value h_decayed = tape.mul(decay, h_prev);

    // History-based then cross-feature step imputation.
    Value pred_h = tape.matvec(p.W_h, h_decayed);
    Value xh = tape.merge_observed(x_t, m_t, pred_h);
    Value pred_f = tape.matvec(p.W_f, xh);
    Value xf = tape.merge_observed(x_t, m_t, pred_f);

    sq_terms.push_back(tape.masked_sq_err_sum(pred_h, x_t, m_t));
    sq_terms.push_back(tape.masked_sq_err_sum(pred_f, x_t, m_t));

    // GRU cell over (imputed step | mask).
    Value u = tape.concat(xf, tape.constant(m_t));
    Value z = tape.sigmoid(tape.add(tape.add(tape.matvec(p.Wz, u), tape.matvec(p.Uz, h_decayed)), p.bz));
    Value r = tape.sigmoid(tape.add(tape.add(tape.matvec(p.Wr, u), tape.matvec(p.Ur, h_decayed)), p.br));
    Value cand = tape.tanh_(
        tape.add(tape.add(tape.matvec(p.Wn, u), tape.matvec(p.Un, tape.mul(r, h_decayed))), p.bn));
    // h' = (1 - z) * cand + z * h
    Value h_intra = tape.add(cand, tape.mul(z, tape.sub(h_decayed, cand)));

    Value h_t = h_intra;
    Value alpha{};
    Value kappa{};
    if (prototypes_active) {
      Value vh = tape.matvec(p.Vk, h_intra);
      Value scores = tape.matvec(p.WP, vh);
      kappa = tape.softmax_scaled(scores, inv_sqrt_d);
      Value h_inter = tape.matvec_t(p.UP, kappa);
      Value gate_in = tape.concat(h_intra, h_inter);
      alpha = tape.sigmoid(tape.matvec(p.W_alpha, gate_in));
      h_t = tape.add(h_inter, tape.mul(alpha, tape.sub(h_intra, h_inter)));
    }
    if (trace) {
      StepTrace st;
      st.decay = tape.val(decay);
      st.xh = tape.val(xh);
      st.xf = tape.val(xf);
      if (prototypes_active) {
        st.kappa = tape.val(kappa);
        st.alpha = tape.val(alpha);
      }
      trace->push_back(std::move(st));
    }
    out.h.push_back(h_t);
    h_prev = h_t;
  }
  out.sq_sum = tape.add_n(sq_terms);
  return out;
}

}  // namespace

void register_model_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  if (cfg.n_features == 0 || cfg.d == 0) {
    throw std::invalid_argument("register_model_params: n_features and d must be positive");
  }
  std::size_t N = cfg.n_features, d = cfg.d, dm = cfg.mlp_width();
  for (const char* dir : kDirNames) register_direction(store, dir, N, d, rng);
  store.add_xavier("bi.W", d, 2 * d, rng);
  store.add_xavier("refine.zeta.V", d, d, rng);
  store.add_xavier("refine.zeta.W", d, d, rng);
  store.add_xavier("refine.zeta.U", d, d, rng);
  store.add_xavier("refine.xi.V", d, d, rng);
  store.add_xavier("refine.xi.W", d, d, rng);
  store.add_xavier("refine.xi.U", d, d, rng);
  store.add_xavier("refine.mlp.W1", dm, 2 * d, rng);
  store.add_xavier("refine.mlp.W2", N, dm, rng);
}

void zero_feature_reg_diagonal(ParamStore& store) {
  for (const char* dir : kDirNames) {
    Tensor& wf = store.value(std::string(dir) + ".W_f");
    for (std::size_t i = 0; i < wf.rows(); ++i) wf(i, i) = 0.0;
  }
}

SeriesTensors prepare_series(const Series& s) {
  if (s.T == 0) throw std::invalid_argument("prepare_series: empty series");
  SeriesTensors st;
  st.T = s.T;
  st.x = s.values;
  st.m = s.mask;
  st.x_rev = reverse_rows(s.values);
  st.m_rev = reverse_rows(s.mask);
  st.delta_fwd = compute_time_gaps(s.timestamps, s.mask);

  // Gap computation on the time-reversed series: negate-and-reverse keeps
  // timestamps non-decreasing while preserving the step widths.
  std::size_t T = s.T, N = s.values.cols();
  Tensor rev_times({T, N});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) rev_times(t, n) = -s.timestamps(T - 1 - t, n);
  st.delta_bwd = compute_time_gaps(rev_times, st.m_rev);

  for (std::size_t i = 0; i < s.mask.numel(); ++i) st.obs_count += s.mask[i] > 0.5 ? 1.0 : 0.0;
  return st;
}

ModelRefs bind_model(TapeBind& bind, const ModelConfig& cfg, bool prototypes_active) {
  ModelRefs refs;
  refs.prototypes_active = prototypes_active && !cfg.disable_prototypes;
  refs.fwd = bind_direction(bind, "fwd");
  refs.bwd = bind_direction(bind, "bwd");
  refs.W_bi = bind("bi.W");
  refs.Vzeta = bind("refine.zeta.V");
  refs.Wzeta = bind("refine.zeta.W");
  refs.Uzeta = bind("refine.zeta.U");
  refs.Vxi = bind("refine.xi.V");
  refs.Wxi = bind("refine.xi.W");
  refs.Uxi = bind("refine.xi.U");
  refs.mlp_W1 = bind("refine.mlp.W1");
  refs.mlp_W2 = bind("refine.mlp.W2");
  if (refs.prototypes_active) {
    refs.P = bind("prototypes.P");
    Tape& tape = bind.tape();
    refs.fwd.WP = tape.matmul_nt(refs.P, refs.fwd.Wk);
    refs.fwd.UP = tape.matmul_nt(refs.P, refs.fwd.Uk);
    refs.bwd.WP = tape.matmul_nt(refs.P, refs.bwd.Wk);
    refs.bwd.UP = tape.matmul_nt(refs.P, refs.bwd.Uk);
  }
  return refs;
}

SeriesForward run_series(Tape& tape, const ModelRefs& refs, const ModelConfig& cfg,
                         const SeriesTensors& st, std::vector<StepTrace>* fwd_trace) {
  if (st.T == 0) throw std::invalid_argument("run_series: empty series");
  std::size_t T = st.T, d = cfg.d;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  DirOutputs f = run_direction(tape, refs.fwd, refs.prototypes_active, d, inv_sqrt_d, st.x, st.m,
                               st.delta_fwd, fwd_trace);
  DirOutputs b = run_direction(tape, refs.bwd, refs.prototypes_active, d, inv_sqrt_d, st.x_rev,
                               st.m_rev, st.delta_bwd, nullptr);

  // Fuse per-step states, aligning the backward pass to forward time.
  std::vector<Value> H_rows;
  H_rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Value cat = tape.concat(f.h[t], b.h[T - 1 - t]);
    H_rows.push_back(tape.matvec(refs.W_bi, cat));
  }
  SeriesForward out;
  out.H = tape.stack_rows(H_rows);
  out.sq_fwd = f.sq_sum;
  out.sq_bwd = b.sq_sum;
  out.h_fwd = f.h;
  out.h_bwd = b.h;

  if (refs.prototypes_active) {
    Value Pstar = refs.P;
    if (!cfg.disable_refinement) {
      // Series-conditioned prototype refinement.
      Value A = tape.matmul_nt(refs.P, refs.Vzeta);     // [K x d]
      Value B = tape.matmul_nt(out.H, refs.Wzeta);      // [T x d]
      Value scores = tape.matmul_nt(A, B);              // [K x T]
      out.zeta = tape.softmax_rows_scaled(scores, inv_sqrt_d);
      Value UH = tape.matmul_nt(out.H, refs.Uzeta);     // [T x d]
      Pstar = tape.matmul(out.zeta, UH);                // [K x d]
    }
    Value C = tape.matmul_nt(out.H, refs.Vxi);          // [T x d]
    Value D = tape.matmul_nt(Pstar, refs.Wxi);          // [K x d]
    Value scores2 = tape.matmul_nt(C, D);               // [T x K]
    out.xi = tape.softmax_rows_scaled(scores2, inv_sqrt_d);
    Value UPstar = tape.matmul_nt(Pstar, refs.Uxi);     // [K x d]
    out.Hstar = tape.matmul(out.xi, UPstar);            // [T x d]
  } else {
    out.Hstar = tape.constant(Tensor::zeros(T, d));
  }

  Value cat = tape.concat_cols(out.H, out.Hstar);       // [T x 2d]
  Value hidden = tape.activation(cfg.gelu_form, tape.matmul_nt(cat, refs.mlp_W1));
  out.xhat = tape.matmul_nt(hidden, refs.mlp_W2);       // [T x N]
  out.sq_final = tape.masked_sq_err_sum(out.xhat, st.x, st.m);
  return out;
}

Tensor impute_series(ParamStore& store, const ModelConfig& cfg, bool prototypes_active,
                     const Series& s) {
  Tape tape(false);
  TapeBind bind(tape, store);
  ModelRefs refs = bind_model(bind, cfg, prototypes_active);
  SeriesTensors st = prepare_series(s);
  SeriesForward fwd = run_series(tape, refs, cfg, st);
  return tape.val(fwd.xhat);
}

}  // namespace prime
