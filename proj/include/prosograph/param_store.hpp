#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prosograph/rng.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Named map of learnable tensors. std::map keeps iteration lexicographic so
// optimizer state and checkpoints are reproducible.
class ParamStore {
 public:
  explicit ParamStore(uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  uint64_t rng_seed() const { return rng_seed_; }

  DiffTensor& create(const std::string& name, Shape shape, std::vector<double> values) {
    auto [it, inserted] = params_.emplace(name, DiffTensor::parameter(std::move(shape), std::move(values)));
    if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
    return it->second;
  }

  // Uniform in +-sqrt(6/(fan_in+fan_out)); biases start at zero.
  DiffTensor& create_glorot(const std::string& name, int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return create(name, {rows, cols}, std::move(v));
  }

  DiffTensor& create_zeros(const std::string& name, Shape shape) {
    return create(name, std::move(shape), std::vector<double>(shape_numel(shape), 0.0));
  }

  DiffTensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  const DiffTensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  size_t total_coords() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  // Order- and bit-sensitive digest of all parameter values.
  uint64_t fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& [name, t] : params_) {
      mix(name.data(), name.size());
      mix(t.values().data(), t.values().size() * sizeof(double));
    }
    return h;
  }

 private:
  std::map<std::string, DiffTensor> params_;
  uint64_t rng_seed_;
};

// Adam with bias correction. Moment slots are created on first step in the
// store's lexicographic order, so updates are deterministic.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // The optional filter restricts the update to matching parameter names
  // (e.g. adversary-only refresh steps).
  void step(ParamStore& store, const std::function<bool(const std::string&)>& filter = {}) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : store) {
      if (filter && !filter(name)) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(p.numel(), 0.0);
        v.assign(p.numel(), 0.0);
      }
      auto& values = p.mutable_values();
      const auto& g = p.grad();
      for (int i = 0; i < p.numel(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        values[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace prosograph
