#pragma once

#include <map>
#include <string>

#include "prime/param_store.hpp"
#include "prime/tape.hpp"

namespace prime {

// Lends store parameters to a tape as differentiable leaves and copies the
// accumulated adjoints back after the backward pass.
class TapeBind {
 public:
  TapeBind(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

  Value operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Value v = tape_.leaf(store_.value(name), true);
    bound_.emplace(name, v);
    return v;
  }

  // Adds tape gradients into the store accumulators.
  void harvest() {
    for (const auto& [name, v] : bound_) {
      const Tensor& g = tape_.grad(v);
      if (g.numel() == 0) continue;  // parameter unused by this graph
      Tensor& acc = store_.grad(name);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParamStore& store_;
  std::map<std::string, Value> bound_;
};

}  // namespace prime
