#include "prime/tape.hpp"

#include <algorithm>
#include <cmath>

namespace prime {

namespace {
constexpr double kDistEps = 1e-12;

double row_distance(const Tensor& A, std::size_t i, const Tensor& B, std::size_t j) {
  std::size_t d = A.cols();
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double diff = A(i, k) - B(j, k);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}
}  // namespace

double activation_scalar(Activation kind, double x) {
  switch (kind) {
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::GeluExact:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::GeluTanh: {
      double u = std::sqrt(2.0 / 3.14159265358979323846) * (x + 0.044715 * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
    case Activation::Relu:
      return x > 0.0 ? x : 0.0;
  }
  return 0.0;
}

double activation_grad_scalar(Activation kind, double x, double y) {
  switch (kind) {
    case Activation::Sigmoid:
      return y * (1.0 - y);
    case Activation::Tanh:
      return 1.0 - y * y;
    case Activation::GeluExact: {
      double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
      return cdf + x * pdf;
    }
    case Activation::GeluTanh: {
      double c = std::sqrt(2.0 / 3.14159265358979323846);
      double u = c * (x + 0.044715 * x * x * x);
      double t = std::tanh(u);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
    }
    case Activation::Relu:
      return x > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

Value Tape::push(Tensor value, bool requires_grad,
                 std::function<void(Tape&, const Tensor&)> bw) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(bw);
  nodes_.push_back(std::move(node));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": dimension error, " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

Value Tape::leaf(Tensor v, bool requires_grad) {
  return push(std::move(v), requires_grad, nullptr);
}

Value Tape::detach(Value v) { return leaf(val(v), false); }

Value Tape::matvec(Value W, Value x) {
  const Tensor& w = val(W);
  const Tensor& xv = val(x);
  if (w.rank() != 2 || xv.rank() != 1 || w.cols() != xv.numel()) {
    throw std::invalid_argument("matvec: dimension error, " + w.shape_str() + " * " +
                                xv.shape_str());
  }
  std::size_t m = w.rows(), n = w.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * xv[j];
    out[i] = acc;
  }
  bool rg = requires_grad(W) || requires_grad(x);
  int wi = W.id, xi = x.id;
  return push(std::move(out), rg, [wi, xi, m, n](Tape& t, const Tensor& g) {
    const Tensor& w = t.nodes_[wi].value;
    const Tensor& xv = t.nodes_[xi].value;
    if (t.nodes_[wi].requires_grad) {
      Tensor& gw = t.grad_ref(wi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw(i, j) += g[i] * xv[j];
    }
    if (t.nodes_[xi].requires_grad) {
      Tensor& gx = t.grad_ref(xi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[j] += w(i, j) * g[i];
    }
  });
}

Value Tape::matvec_bias(Value W, Value x, Value b) {
  Value y = matvec(W, x);
  return add(y, b);
}

Value Tape::matvec_t(Value W, Value v) {
  const Tensor& w = val(W);
  const Tensor& vv = val(v);
  if (w.rank() != 2 || vv.rank() != 1 || w.rows() != vv.numel()) {
    throw std::invalid_argument("matvec_t: dimension error, " + w.shape_str() + "^T * " +
                                vv.shape_str());
  }
  std::size_t m = w.rows(), n = w.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j] * vv[i];
  }
  bool rg = requires_grad(W) || requires_grad(v);
  int wi = W.id, vi = v.id;
  return push(std::move(out), rg, [wi, vi, m, n](Tape& t, const Tensor& g) {
    const Tensor& w = t.nodes_[wi].value;
    const Tensor& vv = t.nodes_[vi].value;
    if (t.nodes_[wi].requires_grad) {
      Tensor& gw = t.grad_ref(wi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw(i, j) += vv[i] * g[j];
    }
    if (t.nodes_[vi].requires_grad) {
      Tensor& gv = t.grad_ref(vi);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += w(i, j) * g[j];
        gv[i] += acc;
      }
    }
  });
}

Value Tape::matmul(Value A, Value B) {
  const Tensor& a = val(A);
  const Tensor& b = val(B);
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension error, " + a.shape_str() + " * " +
                                b.shape_str());
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double av = a(i, l);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += av * b(l, j);
    }
  bool rg = requires_grad(A) || requires_grad(B);
  int ai = A.id, bi = B.id;
  return push(std::move(out), rg, [ai, bi, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& a = t.nodes_[ai].value;
    const Tensor& b = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * b(l, j);
          ga(i, l) += acc;
        }
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t i = 0; i < m; ++i) {
          double av = a(i, l);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb(l, j) += av * g(i, j);
        }
    }
  });
}

Value Tape::matmul_nt(Value A, Value B) {
  const Tensor& a = val(A);
  const Tensor& b = val(B);
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: dimension error, " + a.shape_str() + " * " +
                                b.shape_str() + "^T");
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* ra = a.data() + i * k;
      const double* rb = b.data() + j * k;
      for (std::size_t l = 0; l < k; ++l) acc += ra[l] * rb[l];
      out(i, j) = acc;
    }
  bool rg = requires_grad(A) || requires_grad(B);
  int ai = A.id, bi = B.id;
  return push(std::move(out), rg, [ai, bi, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& a = t.nodes_[ai].value;
    const Tensor& b = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gv = g(i, j);
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < k; ++l) ga(i, l) += gv * b(j, l);
        }
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gv = g(i, j);
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < k; ++l) gb(j, l) += gv * a(i, l);
        }
    }
  });
}

Value Tape::add(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, const Tensor& g) {
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

Value Tape::sub(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, const Tensor& g) {
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Value Tape::mul(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, const Tensor& g) {
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& bv = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += bv[i] * g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += av[i] * g[i];
    }
  });
}

Value Tape::add_n(const std::vector<Value>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty operand list");
  Tensor out = val(xs[0]);
  bool rg = requires_grad(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Tensor& v = val(xs[k]);
    check_same_shape(out, v, "add_n");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += v[i];
    rg = rg || requires_grad(xs[k]);
  }
  std::vector<int> ids(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) ids[k] = xs[k].id;
  return push(std::move(out), rg, [ids](Tape& t, const Tensor& g) {
    for (int id : ids) {
      if (!t.nodes_[id].requires_grad) continue;
      Tensor& gp = t.grad_ref(id);
      for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
    }
  });
}

Value Tape::scale(Value a, double c) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  int ai = a.id;
  return push(std::move(out), requires_grad(a), [ai, c](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    Tensor& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  });
}

Value Tape::mul_const(Value a, const Tensor& c) {
  const Tensor& av = val(a);
  check_same_shape(av, c, "mul_const");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  int ai = a.id;
  Tensor cc = c;
  return push(std::move(out), requires_grad(a), [ai, cc](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    Tensor& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += cc[i] * g[i];
  });
}

Value Tape::merge_observed(const Tensor& x, const Tensor& m, Value pred) {
  const Tensor& pv = val(pred);
  check_same_shape(x, m, "merge_observed");
  check_same_shape(x, pv, "merge_observed");
  Tensor out = pv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = m[i] * x[i] + (1.0 - m[i]) * pv[i];
  int pi = pred.id;
  Tensor mask = m;
  return push(std::move(out), requires_grad(pred), [pi, mask](Tape& t, const Tensor& g) {
    if (!t.nodes_[pi].requires_grad) return;
    Tensor& gp = t.grad_ref(pi);
    for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += (1.0 - mask[i]) * g[i];
  });
}

Value Tape::concat(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.rank() != 1 || bv.rank() != 1) {
    throw std::invalid_argument("concat: rank-1 operands required");
  }
  std::size_t p = av.numel(), q = bv.numel();
  Tensor out({p + q});
  for (std::size_t i = 0; i < p; ++i) out[i] = av[i];
  for (std::size_t i = 0; i < q; ++i) out[p + i] = bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi, p, q](Tape& t, const Tensor& g) {
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < p; ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < q; ++i) gb[i] += g[p + i];
    }
  });
}

Value Tape::concat_cols(Value A, Value B) {
  const Tensor& av = val(A);
  const Tensor& bv = val(B);
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
    throw std::invalid_argument("concat_cols: dimension error, " + av.shape_str() + " | " +
                                bv.shape_str());
  }
  std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = av(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv(i, j);
  }
  bool rg = requires_grad(A) || requires_grad(B);
  int ai = A.id, bi = B.id;
  return push(std::move(out), rg, [ai, bi, r, ca, cb](Tape& t, const Tensor& g) {
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga(i, j) += g(i, j);
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb(i, j) += g(i, ca + j);
    }
  });
}

Value Tape::stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty row list");
  std::size_t d = val(rows[0]).numel();
  Tensor out({rows.size(), d});
  bool rg = false;
  std::vector<int> ids(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = val(rows[i]);
    if (r.rank() != 1 || r.numel() != d) {
      throw std::invalid_argument("stack_rows: inconsistent row shapes");
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) = r[j];
    rg = rg || requires_grad(rows[i]);
    ids[i] = rows[i].id;
  }
  return push(std::move(out), rg, [ids, d](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.nodes_[ids[i]].requires_grad) continue;
      Tensor& gr = t.grad_ref(ids[i]);
      for (std::size_t j = 0; j < d; ++j) gr[j] += g(i, j);
    }
  });
}

Value Tape::activation(Activation kind, Value x) {
  const Tensor& xv = val(x);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = activation_scalar(kind, xv[i]);
  int xi = x.id;
  return push(std::move(out), requires_grad(x), [xi, kind](Tape& t, const Tensor& g) {
    if (!t.nodes_[xi].requires_grad) return;
    const Tensor& xv = t.nodes_[xi].value;
    Tensor& gx = t.grad_ref(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      double y = activation_scalar(kind, xv[i]);
      gx[i] += activation_grad_scalar(kind, xv[i], y) * g[i];
    }
  });
}

Value Tape::exp_neg_relu(Value x) {
  const Tensor& xv = val(x);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(-std::max(0.0, xv[i]));
  int xi = x.id;
  return push(std::move(out), requires_grad(x), [xi](Tape& t, const Tensor& g) {
    if (!t.nodes_[xi].requires_grad) return;
    const Tensor& xv = t.nodes_[xi].value;
    Tensor& gx = t.grad_ref(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (xv[i] > 0.0) gx[i] += -std::exp(-xv[i]) * g[i];
    }
  });
}

namespace {
void softmax_row(const double* in, double* out, std::size_t n, double scale) {
  double mx = in[0] * scale;
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i] * scale);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] * scale - mx);
    denom += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
}

void softmax_row_backward(const double* y, const double* g, double* gx, std::size_t n,
                          double scale) {
  double dotv = 0.0;
  for (std::size_t i = 0; i < n; ++i) dotv += y[i] * g[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += scale * y[i] * (g[i] - dotv);
}
}  // namespace

Value Tape::softmax_scaled(Value s, double scale) {
  const Tensor& sv = val(s);
  if (sv.rank() != 1 || sv.numel() == 0) {
    throw std::invalid_argument("softmax_scaled: non-empty rank-1 input required");
  }
  if (!(scale > 0.0)) throw std::invalid_argument("softmax_scaled: scale must be positive");
  if (!sv.all_finite()) throw NonFiniteError("softmax_scaled: non-finite input");
  Tensor out({sv.numel()});
  softmax_row(sv.data(), out.data(), sv.numel(), scale);
  int si = s.id;
  Tensor y = out;
  return push(std::move(out), requires_grad(s), [si, y, scale](Tape& t, const Tensor& g) {
    if (!t.nodes_[si].requires_grad) return;
    Tensor& gs = t.grad_ref(si);
    softmax_row_backward(y.data(), g.data(), gs.data(), y.numel(), scale);
  });
}

Value Tape::softmax_rows_scaled(Value S, double scale) {
  const Tensor& sv = val(S);
  if (sv.rank() != 2) throw std::invalid_argument("softmax_rows_scaled: rank-2 input required");
  if (!(scale > 0.0)) throw std::invalid_argument("softmax_rows_scaled: scale must be positive");
  if (!sv.all_finite()) throw NonFiniteError("softmax_rows_scaled: non-finite input");
  std::size_t m = sv.rows(), n = sv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) softmax_row(sv.data() + i * n, out.data() + i * n, n, scale);
  int si = S.id;
  Tensor y = out;
  return push(std::move(out), requires_grad(S), [si, y, scale, m, n](Tape& t, const Tensor& g) {
    if (!t.nodes_[si].requires_grad) return;
    Tensor& gs = t.grad_ref(si);
    for (std::size_t i = 0; i < m; ++i) {
      softmax_row_backward(y.data() + i * n, g.data() + i * n, gs.data() + i * n, n, scale);
    }
  });
}

Value Tape::dot(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i] * bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int ai = a.id, bi = b.id;
  return push(Tensor({1}, {acc}), rg, [ai, bi](Tape& t, const Tensor& g) {
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& bv = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < av.numel(); ++i) ga[i] += bv[i] * g[0];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < bv.numel(); ++i) gb[i] += av[i] * g[0];
    }
  });
}

Value Tape::sum(Value a) {
  const Tensor& av = val(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
  int ai = a.id;
  return push(Tensor({1}, {acc}), requires_grad(a), [ai](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    Tensor& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
  });
}

Value Tape::masked_sq_err_sum(Value pred, const Tensor& x, const Tensor& mask) {
  const Tensor& pv = val(pred);
  check_same_shape(pv, x, "masked_sq_err_sum");
  check_same_shape(pv, mask, "masked_sq_err_sum");
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    double e = x[i] - pv[i];
    acc += mask[i] * e * e;
  }
  int pi = pred.id;
  Tensor xc = x, mc = mask;
  return push(Tensor({1}, {acc}), requires_grad(pred), [pi, xc, mc](Tape& t, const Tensor& g) {
    if (!t.nodes_[pi].requires_grad) return;
    const Tensor& pv = t.nodes_[pi].value;
    Tensor& gp = t.grad_ref(pi);
    for (std::size_t i = 0; i < pv.numel(); ++i) {
      gp[i] += mc[i] * 2.0 * (pv[i] - xc[i]) * g[0];
    }
  });
}

Value Tape::min_pairwise_dist_sum(Value A, const Tensor& B) {
  const Tensor& av = val(A);
  if (av.rank() != 2 || B.rank() != 2 || av.cols() != B.cols()) {
    throw std::invalid_argument("min_pairwise_dist_sum: dimension error");
  }
  std::size_t K = av.rows(), M = B.rows();
  double total = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> hits;  // (row in B, argmin row in A)
  hits.reserve(M);
  for (std::size_t i = 0; i < M; ++i) {
    double best = row_distance(av, 0, B, i);
    std::size_t bj = 0;
    for (std::size_t j = 1; j < K; ++j) {
      double r = row_distance(av, j, B, i);
      if (r < best) {
        best = r;
        bj = j;
      }
    }
    total += best;
    hits.emplace_back(i, bj);
  }
  int ai = A.id;
  Tensor bc = B;
  return push(Tensor({1}, {total}), requires_grad(A), [ai, bc, hits](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& av = t.nodes_[ai].value;
    Tensor& ga = t.grad_ref(ai);
    std::size_t d = av.cols();
    for (const auto& [i, j] : hits) {
      double r = row_distance(av, j, bc, i);
      if (r < kDistEps) continue;
      for (std::size_t k = 0; k < d; ++k) {
        ga(j, k) += g[0] * (av(j, k) - bc(i, k)) / r;
      }
    }
  });
}

Value Tape::assigned_dist_sum(Value A, const Tensor& B,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const Tensor& av = val(A);
  if (av.rank() != 2 || B.rank() != 2 || av.cols() != B.cols()) {
    throw std::invalid_argument("assigned_dist_sum: dimension error");
  }
  double total = 0.0;
  for (const auto& [ja, jb] : pairs) total += row_distance(av, ja, B, jb);
  int ai = A.id;
  Tensor bc = B;
  auto pc = pairs;
  return push(Tensor({1}, {total}), requires_grad(A), [ai, bc, pc](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& av = t.nodes_[ai].value;
    Tensor& ga = t.grad_ref(ai);
    std::size_t d = av.cols();
    for (const auto& [ja, jb] : pc) {
      double r = row_distance(av, ja, bc, jb);
      if (r < kDistEps) continue;
      for (std::size_t k = 0; k < d; ++k) {
        ga(ja, k) += g[0] * (av(ja, k) - bc(jb, k)) / r;
      }
    }
  });
}

Value Tape::separation_hinge_sum(Value A, double margin) {
  const Tensor& av = val(A);
  if (av.rank() != 2) throw std::invalid_argument("separation_hinge_sum: rank-2 input required");
  std::size_t K = av.rows();
  double total = 0.0;
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t j2 = 0; j2 < K; ++j2) {
      if (j == j2) continue;
      double r = row_distance(av, j, av, j2);
      if (r < margin) total += margin - r;
    }
  int ai = A.id;
  return push(Tensor({1}, {total}), requires_grad(A), [ai, margin, K](Tape& t, const Tensor& g) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& av = t.nodes_[ai].value;
    Tensor& ga = t.grad_ref(ai);
    std::size_t d = av.cols();
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t j2 = 0; j2 < K; ++j2) {
        if (j == j2) continue;
        double r = row_distance(av, j, av, j2);
        if (r >= margin || r < kDistEps) continue;
        for (std::size_t k = 0; k < d; ++k) {
          double dir = (av(j, k) - av(j2, k)) / r;
          ga(j, k) += -g[0] * dir;
          ga(j2, k) += g[0] * dir;
        }
      }
  });
}

void Tape::backward(Value root) {
  if (!grad_enabled_) throw std::logic_error("Tape::backward: gradients disabled");
  Node& r = nodes_[root.id];
  if (r.value.numel() != 1) throw std::invalid_argument("Tape::backward: root must be scalar");
  grad_ref(root.id)[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.numel() == 0) continue;
    n.backward(*this, n.grad);
  }
}

}  // namespace prime
