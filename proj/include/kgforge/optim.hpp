#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "kgforge/param_store.hpp"

namespace kgforge {

enum class LrSchedule { CosineAnnealing };

struct OptimConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 100;
  double dropout = 0.2;
  double reg_lambda = 0.01;
  double clip_norm = 1.0;
  int warmup_steps = 200;
  int patience = 3;
  LrSchedule schedule = LrSchedule::CosineAnnealing;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be > 0");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  }
};

// Linear warmup 0 -> base over warmup_steps, then cosine decay base -> 0 at
// total_steps.
inline double schedule_lr(i64 step, const OptimConfig& cfg, i64 total_steps) {
  if (step < 0) throw ContractViolation("schedule_lr: step must be >= 0");
  if (total_steps <= cfg.warmup_steps)
    throw ConfigError("schedule_lr: total_steps (" + std::to_string(total_steps) +
                      ") must exceed warmup_steps (" + std::to_string(cfg.warmup_steps) + ")");
  const double base = cfg.learning_rate;
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return base;
    return base * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(total_steps - cfg.warmup_steps);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Scales all gradients by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the factor applied (1.0 when untouched).
inline double clip_gradients(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : store.grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double factor = max_norm / norm;
  for (auto& [name, g] : store.grads) g *= factor;
  return factor;
}

namespace adam {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
}  // namespace adam

// One Adam step with bias correction over every parameter in the store.
// Moments persist in the store; lr_override (when >= 0) replaces the config
// learning rate, which is how the schedule feeds in.
inline void adam_step(ParamStore& store, const OptimConfig& cfg, double lr_override = -1.0) {
  const double lr = lr_override >= 0.0 ? lr_override : cfg.learning_rate;
  store.step += 1;
  const double t = static_cast<double>(store.step);
  const double bc1 = 1.0 - std::pow(adam::kBeta1, t);
  const double bc2 = 1.0 - std::pow(adam::kBeta2, t);
  for (auto& [name, p] : store.params) {
    auto git = store.grads.find(name);
    if (git == store.grads.end())
      throw ContractViolation("adam_step: missing gradient for parameter " + name);
    const Tensor& g = git->second;
    if (g.shape != p.shape)
      throw ContractViolation("adam_step: gradient shape mismatch for " + name);
    auto& m = store.opt_m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    auto& v = store.opt_v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      m.data[i] = adam::kBeta1 * m.data[i] + (1.0 - adam::kBeta1) * gi;
      v.data[i] = adam::kBeta2 * v.data[i] + (1.0 - adam::kBeta2) * gi * gi;
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      p.data[i] -= lr * m_hat / (std::sqrt(v_hat) + adam::kEps);
    }
  }
}

}  // namespace kgforge
