#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "olvit/config.hpp"
#include "olvit/error.hpp"
#include "olvit/params.hpp"

namespace olvit {

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
inline double lr_at(std::size_t step, const ScheduleConfig& cfg) {
  if (step >= cfg.total_steps) return 0.0;
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
struct OptimState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m, v;  // parallel to the parameter registry
};

// AdamW with decoupled decay applied only to parameters whose kind decays.
template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& params, OptimConfig cfg) : params_(params), cfg_(cfg) { reset(); }

  void reset() {
    state_.step = 0;
    state_.m.clear();
    state_.v.clear();
    for (const auto& p : params_.entries()) {
      state_.m.emplace_back(p.value.numel(), T(0));
      state_.v.emplace_back(p.value.numel(), T(0));
    }
  }

  const OptimConfig& config() const { return cfg_; }
  OptimState<T>& state() { return state_; }
  const OptimState<T>& state() const { return state_; }

  // Global L2 norm of all gradients.
  double grad_norm() const {
    double total = 0.0;
    for (const auto& p : params_.entries()) {
      if (!p.value.has_grad()) continue;
      for (auto g : p.value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(total);
  }

  // Throws NumericError naming the first parameter with a non-finite gradient;
  // parameters and moments are untouched in that case.
  void step(double lr) {
    for (const auto& p : params_.entries()) {
      if (!p.value.has_grad()) continue;
      for (auto g : p.value.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name + "; step aborted");
      }
    }
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double norm = grad_norm();
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }
    ++state_.step;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
    auto& entries = params_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& p = entries[i];
      auto theta = p.value.mutable_data();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      const bool has_grad = p.value.has_grad();
      const auto grad = p.value.grad();
      const double decay = p.decays() ? cfg_.weight_decay : 0.0;
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const double g = has_grad ? static_cast<double>(grad[j]) * clip : 0.0;
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * g;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double m_hat = mj / bc1;
        const double v_hat = vj / bc2;
        const double t = static_cast<double>(theta[j]);
        theta[j] = static_cast<T>(t - lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + decay * t));
      }
    }
  }

 private:
  ParamStore<T>& params_;
  OptimConfig cfg_;
  OptimState<T> state_;
};

}  // namespace olvit
