#pragma once

#include <map>
#include <string>

#include "kgforge/tensor.hpp"

namespace kgforge {

// Named parameters with accumulated gradients and Adam moments. std::map keeps
// iteration order deterministic, which makes optimizer sweeps and checkpoint
// layouts reproducible.
struct ParamStore {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> grads;
  std::map<std::string, Tensor> opt_m;
  std::map<std::string, Tensor> opt_v;
  i64 step = 0;

  Tensor& add(const std::string& name, Tensor init) {
    if (params.count(name))
      throw ContractViolation("ParamStore::add: duplicate parameter " + name);
    auto [it, ok] = params.emplace(name, std::move(init));
    (void)ok;
    return it->second;
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
      throw ContractViolation("ParamStore::get: unknown parameter " + name);
    return it->second;
  }

  const Tensor& get(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw ContractViolation("ParamStore::get: unknown parameter " + name);
    return it->second;
  }

  // Creates (or resets) a zero gradient for every parameter.
  void zero_grads() {
    for (const auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads.emplace(name, Tensor::zeros(p.shape));
      else
        std::fill(it->second.data.begin(), it->second.data.end(), 0.0);
    }
  }

  void accumulate_grad(const std::string& name, const Tensor& g) {
    const Tensor& p = get(name);
    if (p.shape != g.shape)
      throw ContractViolation("ParamStore: gradient shape mismatch for " + name);
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, g);
    else
      it->second += g;
  }

  i64 total_parameters() const {
    i64 n = 0;
    for (const auto& [name, p] : params) n += static_cast<i64>(p.size());
    return n;
  }

  i64 total_parameters_with_prefix(const std::string& prefix) const {
    i64 n = 0;
    for (const auto& [name, p] : params)
      if (name.rfind(prefix, 0) == 0) n += static_cast<i64>(p.size());
    return n;
  }
};

}  // namespace kgforge
