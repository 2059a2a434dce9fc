// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "desktrain/monitor.hpp"

namespace desktrain {

void OptimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("optim config: " + msg); };
  if (!(lr_max > 0.0)) fail("lr_max must be positive");
  if (!(lr_min > 0.0)) fail("lr_min must be positive");
  if (lr_min > lr_max) fail("lr_min must not exceed lr_max");
  if (warmup_steps >= total_steps) fail("warmup_steps must be smaller than total_steps");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

double lr_at(std::uint64_t step, const OptimConfig& cfg) {
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.lr_max;
    return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.total_steps) return cfg.lr_min;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

ClipResult clip_global_norm(GradientSet& grads, double clip) {
  ClipResult r{global_l2(grads), false};
  if (r.pre_clip_norm > clip) {
    const double scale = clip / r.pre_clip_norm;
    for (auto& t : grads) {
      for (double& g : t.data) g *= scale;
    }
    r.clipped = true;
  }
  return r;
}

OptimState OptimState::zeros_like(const TensorSet& params) {
  return OptimState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(TensorSet& params, const GradientSet& grads, OptimState& state, const OptimConfig& cfg, double lr,
                bf16::Quantizer& quantizer) {
  params.require_congruent(grads, "adamw_step (grads)");
  params.require_congruent(state.m, "adamw_step (first moment)");
  params.require_congruent(state.v, "adamw_step (second moment)");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].data;
    const auto& g = grads[i].data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const double decay =
        (params[i].kind == ParamKind::kNorm && !cfg.decay_norm_weights) ? 0.0 : cfg.weight_decay;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = quantizer.apply(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j]);
      v[j] = quantizer.apply(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j]);
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] = quantizer.apply(w[j] - lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + decay * w[j]));
    }
  }
}

}  // namespace desktrain
