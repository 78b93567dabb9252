#include "prime/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace prime {

const GradCheckEntry* GradCheckReport::worst_entry() const {
  const GradCheckEntry* best = nullptr;
  for (const auto& e : entries) {
    if (!best || e.max_rel_err > best->max_rel_err) best = &e;
  }
  return best;
}

namespace {
double eval_loss(ParamStore& store, const LossBuilder& build_loss) {
  Tape tape(false);
  TapeBind bind(tape, store);
  Value loss = build_loss(tape, bind);
  double v = tape.val(loss)[0];
  if (!std::isfinite(v)) {
    throw std::runtime_error("check_gradients: non-finite loss, check aborted");
  }
  return v;
}
}  // namespace

GradCheckReport check_gradients(ParamStore& store, const LossBuilder& build_loss, double eps) {
  if (store.quantize_f32()) {
    throw std::logic_error("check_gradients: store must be in 64-bit mode");
  }
  // One recorded pass for the analytic gradients.
  store.zero_grad();
  {
    Tape tape(true);
    TapeBind bind(tape, store);
    Value loss = build_loss(tape, bind);
    if (!std::isfinite(tape.val(loss)[0])) {
      throw std::runtime_error("check_gradients: non-finite loss, check aborted");
    }
    tape.backward(loss);
    bind.harvest();
  }

  GradCheckReport report;
  for (const std::string& name : store.names()) {
    Tensor& theta = store.value(name);
    const Tensor& analytic = store.grad(name);
    GradCheckEntry entry{name, 0.0};
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      double saved = theta[i];
      theta[i] = saved + eps;
      double up = eval_loss(store, build_loss);
      theta[i] = saved - eps;
      double down = eval_loss(store, build_loss);
      theta[i] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      double rel = std::abs(analytic[i] - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace prime
