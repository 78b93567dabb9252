#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prime/param_store.hpp"
#include "prime/tape.hpp"
#include "prime/tape_bind.hpp"

namespace prime {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  const GradCheckEntry* worst_entry() const;
};

// Builds the scalar loss for the current store contents. The builder must be
// deterministic in the store values; it reads parameters through the binder.
using LossBuilder = std::function<Value(Tape&, TapeBind&)>;

// Central finite differences against tape gradients for every parameter
// element. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Requires the store to be in 64-bit mode (no f32 snapping).
GradCheckReport check_gradients(ParamStore& store, const LossBuilder& build_loss, double eps);

}  // namespace prime
