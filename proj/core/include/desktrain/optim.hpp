// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "desktrain/bf16.hpp"
#include "desktrain/tensor.hpp"

namespace desktrain {

struct OptimConfig {
  double lr_max = 3e-4;
  double lr_min = 3e-5;
  std::uint64_t warmup_steps = 2000;
  std::uint64_t total_steps = 100000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double adam_eps = 1e-8;
  bool decay_norm_weights = true;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

/// Linear warmup from 0 at step 0 to lr_max at warmup_steps, then cosine
/// decay to lr_min at total_steps; lr_min afterwards.
double lr_at(std::uint64_t step, const OptimConfig& cfg);

struct ClipResult {
  double pre_clip_norm = 0.0;
  bool clipped = false;
};

/// Scales every tensor by clip / norm when the global l2 norm exceeds clip.
ClipResult clip_global_norm(GradientSet& grads, double clip);

struct OptimState {
  TensorSet m;
  TensorSet v;
  std::uint64_t t = 0;

  static OptimState zeros_like(const TensorSet& params);

  friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// One decoupled-weight-decay Adam update, in place:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   w <- w - lr (m_hat / (sqrt(v_hat) + eps) + lambda w).
/// Under a bf16 quantizer the new moments and weights are rounded.
/// Throws std::invalid_argument on a shape mismatch.
void adamw_step(TensorSet& params, const GradientSet& grads, OptimState& state, const OptimConfig& cfg, double lr,
                bf16::Quantizer& quantizer);

}  // namespace desktrain
