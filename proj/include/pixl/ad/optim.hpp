#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pixl/ad/tensor.hpp"

namespace pixl::ad {

struct Param {
  std::string name;
  Tensor tensor;
  bool decay = true;  // weight decay applies (off for norms, biases, registers)
};

/// Named, ordered parameter registry. Order is the registration order and is
/// what checkpoints and the optimizer iterate over.
class ParamSet {
 public:
  // The returned handle shares storage with the registered parameter.
  Tensor add(std::string name, Tensor t, bool decay = true) {
    for (const auto& p : params_) require(p.name != name, "duplicate parameter name " + name);
    t.set_requires_grad(true);
    params_.push_back({std::move(name), std::move(t), decay});
    return params_.back().tensor;
  }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  size_t size() const { return params_.size(); }
  const Param* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  size_t count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Param> params_;
};

/// Global L2 norm of all gradients; rescales them to max_norm when larger.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamSet& ps, double max_norm) {
  double sq = 0;
  for (auto& p : ps.params())
    if (p.tensor.has_grad())
      for (real g : p.tensor.grad()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const real s = real(max_norm / norm);
    for (auto& p : ps.params())
      if (p.tensor.has_grad())
        for (real& g : p.tensor.grad()) g *= s;
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  AdamW(ParamSet& ps, AdamWConfig cfg) : ps_(&ps), cfg_(cfg) {
    for (const auto& p : ps.params()) {
      m_.emplace_back(p.tensor.numel(), 0.f);
      v_.emplace_back(p.tensor.numel(), 0.f);
    }
  }

  void step(double lr) {
    require(m_.size() == ps_->size(), "optimizer built for a different parameter set");
    ++t_;
    const double bc1 = 1 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1 - std::pow(cfg_.beta2, double(t_));
    const real b1 = real(cfg_.beta1), b2 = real(cfg_.beta2);
    const real step_size = real(lr / bc1);
    const real inv_bc2 = real(1.0 / bc2);
    for (size_t i = 0; i < ps_->size(); ++i) {
      auto& p = ps_->params()[i];
      auto w = p.tensor.data();
      if (p.decay && cfg_.weight_decay > 0) {
        const real shrink = real(1.0 - lr * cfg_.weight_decay);
        for (real& x : w) x *= shrink;
      }
      if (!p.tensor.has_grad()) continue;
      auto g = p.tensor.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (1 - b1) * g[j];
        v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
        w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + real(cfg_.eps));
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<std::vector<real>>& first_moments() { return m_; }
  std::vector<std::vector<real>>& second_moments() { return v_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParamSet* ps_;
  AdamWConfig cfg_;
  std::vector<std::vector<real>> m_, v_;
  long t_ = 0;
};

}  // namespace pixl::ad
