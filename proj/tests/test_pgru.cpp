#include <cmath>

#include "doctest.h"
#include "prime/model.hpp"
#include "prime/rng.hpp"
#include "test_util.hpp"

using namespace prime;

namespace {

// Single-step building blocks exercised directly on a tape.
Value decay_hidden(Tape& tape, Value W_delta, const Tensor& delta_t, Value h_prev) {
  Value z = tape.matvec(W_delta, tape.constant(delta_t));
  return tape.mul(tape.exp_neg_relu(z), h_prev);
}

}  // namespace

TEST_CASE("temporal decay gate") {
  Rng rng(3);
  Tensor W = testutil::gaussian_tensor({4, 2}, rng);
  Tape tape;
  Value Wv = tape.constant(W);

  SUBCASE("zero gap leaves the state untouched") {
    Tensor h0 = testutil::gaussian_tensor({4}, rng);
    Value out = decay_hidden(tape, Wv, Tensor::zeros(2), tape.constant(h0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.val(out)[i] == doctest::Approx(h0[i]));
  }
  SUBCASE("zero state stays zero for any gap") {
    Value out = decay_hidden(tape, Wv, Tensor::vec({5.0, 3.0}), tape.constant(Tensor::zeros(4)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.val(out)[i] == 0.0);
  }
  SUBCASE("a row product of ln 2 halves that component") {
    Tensor Wln = Tensor::mat({{std::log(2.0)}});
    Value out = decay_hidden(tape, tape.constant(Wln), Tensor::vec({1.0}),
                             tape.constant(Tensor::vec({1.0})));
    CHECK(tape.val(out)[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("gate lies in (0,1] and shrinks as gaps grow under non-negative weights") {
    Rng local(9);
    for (int rep = 0; rep < 50; ++rep) {
      Tensor Wpos({3, 2});
      for (std::size_t i = 0; i < Wpos.numel(); ++i) Wpos[i] = std::abs(local.gaussian());
      Tensor small({2}), large({2});
      for (std::size_t i = 0; i < 2; ++i) {
        small[i] = local.uniform(0.0, 2.0);
        large[i] = small[i] + local.uniform(0.0, 3.0);
      }
      Tape t2;
      const Tensor g_small =
          t2.val(t2.exp_neg_relu(t2.matvec(t2.constant(Wpos), t2.constant(small))));
      const Tensor g_large =
          t2.val(t2.exp_neg_relu(t2.matvec(t2.constant(Wpos), t2.constant(large))));
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(g_small[i] > 0.0);
        CHECK(g_small[i] <= 1.0);
        CHECK(g_large[i] <= g_small[i] + 1e-15);
      }
    }
  }
}

TEST_CASE("step imputation merge identity and zero-diagonal") {
  Rng rng(6);
  Tensor W_h = testutil::gaussian_tensor({3, 4}, rng);
  Tensor W_f = testutil::gaussian_tensor({3, 3}, rng);
  for (std::size_t i = 0; i < 3; ++i) W_f(i, i) = 0.0;
  Tensor h_delta = testutil::gaussian_tensor({4}, rng);
  Tensor x = Tensor::vec({1.0, -2.0, 0.5});

  SUBCASE("fully observed steps pass through") {
    Tensor m = Tensor::vec({1, 1, 1});
    Tape tape;
    Value pred_h = tape.matvec(tape.constant(W_h), tape.constant(h_delta));
    Value xh = tape.merge_observed(x, m, pred_h);
    Value pred_f = tape.matvec(tape.constant(W_f), xh);
    Value xf = tape.merge_observed(x, m, pred_f);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(tape.val(xh)[i] == x[i]);
      CHECK(tape.val(xf)[i] == x[i]);
    }
  }
  SUBCASE("nothing observed, zero history, zero weights predicts the normalized mean") {
    Tape tape;
    Value pred_h = tape.matvec(tape.constant(Tensor::zeros(3, 4)), tape.constant(Tensor::zeros(4)));
    Value xh = tape.merge_observed(Tensor::zeros(3), Tensor::zeros(3), pred_h);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tape.val(xh)[i] == 0.0);
  }
  SUBCASE("feature prediction ignores its own coordinate") {
    Tensor m = Tensor::vec({1, 0, 1});
    Tape tape;
    Value xh = tape.merge_observed(x, m, tape.matvec(tape.constant(W_h), tape.constant(h_delta)));
    Tensor xh_val = tape.val(xh);
    Tensor perturbed = xh_val;
    perturbed[1] += 7.0;  // feature 1 is missing
    Tape t2;
    const Tensor& a = t2.val(t2.matvec(t2.constant(W_f), t2.constant(xh_val)));
    const Tensor b = t2.val(t2.matvec(t2.constant(W_f), t2.constant(perturbed)));
    CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-12));
  }
}

TEST_CASE("gru cell closed forms") {
  std::size_t N = 2, d = 3;
  ParamStore store(false);
  Rng rng(4);
  ModelConfig mc;
  mc.n_features = N;
  mc.d = d;
  register_model_params(store, mc, rng);
  // Zero every forward GRU parameter.
  for (const std::string& name : store.names()) {
    if (name.rfind("fwd.gru.", 0) == 0) store.value(name).fill(0.0);
  }

  Tensor h_delta = testutil::gaussian_tensor({d}, rng);
  Tape tape;
  TapeBind bind(tape, store);
  Value u = tape.constant(Tensor::zeros(2 * N));
  Value h = tape.constant(h_delta);
  Value z =
      tape.sigmoid(tape.add(tape.add(tape.matvec(bind("fwd.gru.W_z"), u),
                                     tape.matvec(bind("fwd.gru.U_z"), h)), bind("fwd.gru.b_z")));
  Value r =
      tape.sigmoid(tape.add(tape.add(tape.matvec(bind("fwd.gru.W_r"), u),
                                     tape.matvec(bind("fwd.gru.U_r"), h)), bind("fwd.gru.b_r")));
  Value cand = tape.tanh_(tape.add(
      tape.add(tape.matvec(bind("fwd.gru.W_n"), u), tape.matvec(bind("fwd.gru.U_n"), tape.mul(r, h))),
      bind("fwd.gru.b_n")));
  Value h_next = tape.add(cand, tape.mul(z, tape.sub(h, cand)));

  // All-zero parameters: z = 0.5, candidate = 0, h' = h_delta / 2.
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(tape.val(z)[i] == doctest::Approx(0.5));
    CHECK(tape.val(cand)[i] == doctest::Approx(0.0));
    CHECK(tape.val(h_next)[i] == doctest::Approx(0.5 * h_delta[i]).epsilon(1e-12));
  }
}

TEST_CASE("gru output is bounded by max(|h_delta|, 1) componentwise") {
  testutil::ToyModel toy = testutil::make_toy(15, false);
  Rng rng(8);
  for (int rep = 0; rep < 40; ++rep) {
    Tensor h_delta = testutil::gaussian_tensor({toy.mc.d}, rng, 2.0);
    Tensor u = testutil::gaussian_tensor({2 * toy.mc.n_features}, rng);
    Tape tape;
    TapeBind bind(tape, toy.store);
    Value uv = tape.constant(u);
    Value hv = tape.constant(h_delta);
    Value z = tape.sigmoid(tape.add(tape.add(tape.matvec(bind("fwd.gru.W_z"), uv),
                                             tape.matvec(bind("fwd.gru.U_z"), hv)),
                                    bind("fwd.gru.b_z")));
    Value r = tape.sigmoid(tape.add(tape.add(tape.matvec(bind("fwd.gru.W_r"), uv),
                                             tape.matvec(bind("fwd.gru.U_r"), hv)),
                                    bind("fwd.gru.b_r")));
    Value cand = tape.tanh_(tape.add(tape.add(tape.matvec(bind("fwd.gru.W_n"), uv),
                                              tape.matvec(bind("fwd.gru.U_n"), tape.mul(r, hv))),
                                     bind("fwd.gru.b_n")));
    Value h_next = tape.add(cand, tape.mul(z, tape.sub(hv, cand)));
    for (std::size_t i = 0; i < toy.mc.d; ++i) {
      CHECK(std::abs(tape.val(h_next)[i]) <=
            std::max(std::abs(h_delta[i]), 1.0) + 1e-12);
    }
  }
}

TEST_CASE("prototype attention") {
  Rng rng(12);
  std::size_t d = 4;
  SUBCASE("single prototype gets all the weight") {
    Tensor P = testutil::gaussian_tensor({1, d}, rng);
    Tensor U = testutil::gaussian_tensor({d, d}, rng);
    Tape tape;
    Value Pv = tape.constant(P);
    Value UP = tape.matmul_nt(Pv, tape.constant(U));
    Value scores = tape.constant(Tensor::vec({0.37}));
    Value kappa = tape.softmax_scaled(scores, 1.0 / std::sqrt(static_cast<double>(d)));
    CHECK(tape.val(kappa)[0] == doctest::Approx(1.0));
    Value h_inter = tape.matvec_t(UP, kappa);
    const Tensor& up = tape.val(UP);
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(tape.val(h_inter)[i] == doctest::Approx(up(0, i)).epsilon(1e-12));
    }
  }
  SUBCASE("identical prototypes attract uniform attention") {
    std::size_t K = 5;
    Tensor row = testutil::gaussian_tensor({d}, rng);
    Tensor P({K, d});
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t k = 0; k < d; ++k) P(j, k) = row[k];
    Tensor W = testutil::gaussian_tensor({d, d}, rng);
    Tensor h = testutil::gaussian_tensor({d}, rng);
    Tape tape;
    Value WP = tape.matmul_nt(tape.constant(P), tape.constant(W));
    Value scores = tape.matvec(WP, tape.constant(h));
    Value kappa = tape.softmax_scaled(scores, 0.5);
    for (std::size_t j = 0; j < K; ++j) {
      CHECK(tape.val(kappa)[j] == doctest::Approx(1.0 / static_cast<double>(K)).epsilon(1e-9));
    }
  }
  SUBCASE("hand-set scores follow the closed-form softmax") {
    Tape tape;
    Value kappa = tape.softmax_scaled(tape.constant(Tensor::vec({std::log(2.0), 0.0})), 1.0);
    CHECK(tape.val(kappa)[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(tape.val(kappa)[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("fusion gate") {
  Rng rng(21);
  std::size_t d = 3;
  Tensor h1 = testutil::gaussian_tensor({d}, rng);
  Tensor h2 = testutil::gaussian_tensor({d}, rng);

  SUBCASE("zero gate weights average the two views") {
    Tape tape;
    Value alpha = tape.sigmoid(tape.matvec(tape.constant(Tensor::zeros(d, 2 * d)),
                                           tape.concat(tape.constant(h1), tape.constant(h2))));
    Value fused = tape.add(tape.constant(h2),
                           tape.mul(alpha, tape.sub(tape.constant(h1), tape.constant(h2))));
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(tape.val(alpha)[i] == doctest::Approx(0.5));
      CHECK(tape.val(fused)[i] == doctest::Approx(0.5 * (h1[i] + h2[i])).epsilon(1e-12));
    }
  }
  SUBCASE("identical views are a fixed point for any gate") {
    Tensor W = testutil::gaussian_tensor({d, 2 * d}, rng);
    Tape tape;
    Value alpha = tape.sigmoid(tape.matvec(tape.constant(W),
                                           tape.concat(tape.constant(h1), tape.constant(h1))));
    Value fused = tape.add(tape.constant(h1),
                           tape.mul(alpha, tape.sub(tape.constant(h1), tape.constant(h1))));
    for (std::size_t i = 0; i < d; ++i) CHECK(tape.val(fused)[i] == doctest::Approx(h1[i]));
  }
  SUBCASE("fusion stays inside the componentwise interval") {
    for (int rep = 0; rep < 50; ++rep) {
      Tensor a = testutil::gaussian_tensor({d}, rng);
      Tensor b = testutil::gaussian_tensor({d}, rng);
      Tensor W = testutil::gaussian_tensor({d, 2 * d}, rng);
      Tape tape;
      Value alpha = tape.sigmoid(tape.matvec(tape.constant(W),
                                             tape.concat(tape.constant(a), tape.constant(b))));
      Value fused = tape.add(tape.constant(b),
                             tape.mul(alpha, tape.sub(tape.constant(a), tape.constant(b))));
      for (std::size_t i = 0; i < d; ++i) {
        double lo = std::min(a[i], b[i]), hi = std::max(a[i], b[i]);
        CHECK(tape.val(fused)[i] >= lo - 1e-12);
        CHECK(tape.val(fused)[i] <= hi + 1e-12);
        CHECK(tape.val(alpha)[i] > 0.0);
        CHECK(tape.val(alpha)[i] < 1.0);
      }
    }
  }
}

TEST_CASE("bidirectional runner") {
  SUBCASE("empty series is rejected") {
    CHECK_THROWS_AS(prepare_series(Series{}), std::invalid_argument);
  }
  SUBCASE("single step gives a 1 x d representation") {
    testutil::ToyModel toy = testutil::make_toy(19);
    Rng rng(2);
    Series s = testutil::make_series(1, 2, rng);
    Tape tape;
    TapeBind bind(tape, toy.store);
    ModelRefs refs = bind_model(bind, toy.mc, true);
    SeriesForward out = run_series(tape, refs, toy.mc, prepare_series(s));
    CHECK(tape.val(out.H).rows() == 1);
    CHECK(tape.val(out.H).cols() == toy.mc.d);
    CHECK(tape.val(out.xhat).rows() == 1);
    CHECK(tape.val(out.xhat).cols() == 2);
  }
  SUBCASE("representation is always T x d") {
    testutil::ToyModel toy = testutil::make_toy(23);
    Rng rng(3);
    for (std::size_t T : {2u, 5u, 9u}) {
      Series s = testutil::make_series(T, 2, rng);
      Tape tape;
      TapeBind bind(tape, toy.store);
      ModelRefs refs = bind_model(bind, toy.mc, true);
      SeriesForward out = run_series(tape, refs, toy.mc, prepare_series(s));
      CHECK(tape.val(out.H).rows() == T);
      CHECK(tape.val(out.H).cols() == toy.mc.d);
    }
  }
  SUBCASE("palindromic series with mirrored parameters meet in the middle") {
    // Symmetric init: copy forward parameters onto the backward direction.
    testutil::ToyModel toy = testutil::make_toy(29, false);
    for (const std::string& name : toy.store.names()) {
      if (name.rfind("fwd.", 0) == 0) {
        std::string target = "bwd." + name.substr(4);
        toy.store.value(target) = toy.store.value(name);
      }
    }
    // Palindromic values/mask with mirrored gap structure: times 0,1,3,4.
    Series s;
    s.id = "pal";
    s.T = 4;
    s.timestamps = Tensor({4, 2});
    s.values = Tensor({4, 2});
    s.mask = Tensor({4, 2});
    double times[4] = {0, 1, 3, 4};
    double vals[4] = {0.7, -0.2, -0.2, 0.7};
    double msk[4] = {1, 0, 0, 1};
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t n = 0; n < 2; ++n) {
        s.timestamps(t, n) = times[t];
        s.values(t, n) = vals[t] * (n ? -1.0 : 1.0);
        s.mask(t, n) = n == 0 ? msk[t] : msk[3 - t];
      }
    }
    // Mask must itself be palindromic for the symmetry to hold.
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t t = 0; t < 4; ++t) s.mask(t, n) = msk[t];

    SeriesTensors st = prepare_series(s);
    // A palindrome reads the same in both processing orders.
    for (std::size_t i = 0; i < st.x.numel(); ++i) {
      CHECK(st.x[i] == st.x_rev[i]);
      CHECK(st.m[i] == st.m_rev[i]);
      CHECK(st.delta_fwd[i] == st.delta_bwd[i]);
    }
    Tape tape;
    TapeBind bind(tape, toy.store);
    ModelRefs refs = bind_model(bind, toy.mc, false);
    SeriesForward out = run_series(tape, refs, toy.mc, st);
    // Forward state at step t equals the backward state at mirrored time,
    // i.e. the same processing position.
    REQUIRE(out.h_fwd.size() == 4);
    for (std::size_t t = 0; t < 4; ++t) {
      const Tensor& hf = tape.val(out.h_fwd[t]);
      const Tensor& hb = tape.val(out.h_bwd[t]);
      for (std::size_t k = 0; k < toy.mc.d; ++k) {
        CHECK(hf[k] == doctest::Approx(hb[k]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("step invariants over random configurations") {
  Rng rng(333);
  for (int rep = 0; rep < 25; ++rep) {
    testutil::ToyModel toy = testutil::make_toy(1000 + rep);
    Series s = testutil::make_series(4 + rng.below(4), 2, rng);
    std::vector<StepTrace> trace;
    Tape tape;
    TapeBind bind(tape, toy.store);
    ModelRefs refs = bind_model(bind, toy.mc, true);
    SeriesForward out = run_series(tape, refs, toy.mc, prepare_series(s), &trace);
    (void)out;
    for (std::size_t t = 0; t < trace.size(); ++t) {
      const StepTrace& st = trace[t];
      double ksum = 0.0;
      for (std::size_t j = 0; j < st.kappa.numel(); ++j) ksum += st.kappa[j];
      CHECK(ksum == doctest::Approx(1.0).epsilon(1e-6));
      for (std::size_t i = 0; i < st.decay.numel(); ++i) {
        CHECK(st.decay[i] > 0.0);
        CHECK(st.decay[i] <= 1.0);
      }
      for (std::size_t i = 0; i < st.alpha.numel(); ++i) {
        CHECK(st.alpha[i] > 0.0);
        CHECK(st.alpha[i] < 1.0);
      }
      for (std::size_t n = 0; n < 2; ++n) {
        if (s.mask(t, n) > 0.5) {
          CHECK(st.xh[n] == s.values(t, n));
          CHECK(st.xf[n] == s.values(t, n));
        }
      }
    }
  }
}

TEST_CASE("disabled prototypes reduce the cell to its intra-series path") {
  testutil::ToyModel with = testutil::make_toy(55, true);
  testutil::ToyModel without = testutil::make_toy(55, false);
  // Same seed produces identical non-prototype parameters.
  Rng rng(77);
  Series s = testutil::make_series(5, 2, rng);
  SeriesTensors st = prepare_series(s);

  Tape ta;
  TapeBind ba(ta, with.store);
  SeriesForward a = run_series(ta, bind_model(ba, with.mc, false), with.mc, st);
  Tape tb;
  TapeBind bb(tb, without.store);
  SeriesForward b = run_series(tb, bind_model(bb, without.mc, false), without.mc, st);
  const Tensor& Ha = ta.val(a.H);
  const Tensor& Hb = tb.val(b.H);
  REQUIRE(Ha.same_shape(Hb));
  for (std::size_t i = 0; i < Ha.numel(); ++i) CHECK(Ha[i] == Hb[i]);
  const Tensor& hs = ta.val(a.Hstar);
  for (std::size_t i = 0; i < hs.numel(); ++i) CHECK(hs[i] == 0.0);
}
