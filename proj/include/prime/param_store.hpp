#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prime/rng.hpp"
#include "prime/tensor.hpp"

namespace prime {

// Named parameter tensors with matching gradient accumulators.
//
// quantize_f32 controls the precision mode: when on (production default)
// parameter values are snapped to the float32 grid after init and after
// every optimizer step, so float32 checkpoints round-trip bit-exactly.
// Tests that compare against finite differences switch it off.
class ParamStore {
 public:
  explicit ParamStore(bool quantize_f32 = true) : quantize_f32_(quantize_f32) {}

  bool quantize_f32() const { return quantize_f32_; }

  Tensor& add(const std::string& name, Tensor value) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    if (quantize_f32_) value.quantize_f32();
    Entry e;
    e.grad = Tensor(value.shape());
    e.value = std::move(value);
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  // Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)).
  Tensor& add_xavier(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
    return add(name, std::move(t));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& grad(const std::string& name) { return at(name).grad; }
  const Tensor& grad(const std::string& name) const { return at(name).grad; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto& [k, e] : entries_) e.grad.fill(0.0);
  }

  void quantize_values() {
    if (!quantize_f32_) return;
    for (auto& [k, e] : entries_) e.value.quantize_f32();
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  bool quantize_f32_;
};

}  // namespace prime
