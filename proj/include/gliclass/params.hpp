#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gliclass/tensor.hpp"

namespace gliclass {

// Named parameter registry with stable insertion order (checkpoints and
// optimizer state rely on it).
class ParamStore {
 public:
  Tensor& declare(const std::string& name, Shape shape, Rng& rng, double stddev) {
    Tensor t = stddev == 0.0 ? Tensor::zeros(std::move(shape), true)
                             : Tensor::randn(std::move(shape), rng, stddev, true);
    return add(name, std::move(t));
  }

  Tensor& declare_full(const std::string& name, Shape shape, double value) {
    return add(name, Tensor::full(std::move(shape), value, true));
  }

  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter: " + name);
    index_[name] = order_.size();
    order_.push_back(name);
    tensors_.push_back(std::move(t));
    return tensors_.back();
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    const size_t pos = it->second;
    order_.erase(order_.begin() + pos);
    tensors_.erase(tensors_.begin() + pos);
    index_.erase(it);
    for (auto& [k, v] : index_) {
      if (v > pos) v -= 1;
    }
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return tensors_[it->second];
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  void zero_grads() const {
    for (const Tensor& t : tensors_) {
      if (t.has_grad()) t.zero_grad();
    }
  }

 private:
  std::vector<std::string> order_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Active low-rank adapters: every name in `targets` has companion tensors
// <name>.lora_a [in,r] and <name>.lora_b [r,out] in the store.
struct LoraSpec {
  int r = 0;
  double alpha = 0.0;
  std::vector<std::string> targets;

  bool active() const { return r > 0 && !targets.empty(); }
  double scale() const { return alpha / r; }
  bool is_target(const std::string& name) const {
    for (const std::string& t : targets) {
      if (t == name) return true;
    }
    return false;
  }
};

// Resolves a parameter name to its effective weight: the base tensor, or
// base + (alpha/r)*A*B when a LoRA adapter is attached. All weight access in
// forward passes goes through this.
struct WeightResolver {
  const ParamStore* store = nullptr;
  const LoraSpec* lora = nullptr;

  Tensor operator()(const std::string& name) const {
    const Tensor& base = store->get(name);
    if (lora && lora->active() && lora->is_target(name)) {
      const Tensor& a = store->get(name + ".lora_a");
      const Tensor& b = store->get(name + ".lora_b");
      return add(base, mul_scalar(matmul(a, b), lora->scale()));
    }
    return base;
  }
};

}  // namespace gliclass
