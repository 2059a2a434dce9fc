// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Desk-scale decoder-only transformer: pre-norm RMSNorm blocks, rotary
// position embeddings, SwiGLU feed-forward, coalesced QKV and gate/up
// projections, and a causal mask generated internally from the sequence
// length. Backward passes are hand-derived.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "desktrain/bf16.hpp"
#include "desktrain/loader.hpp"
#include "desktrain/tensor.hpp"

namespace desktrain {

struct ModelConfig {
  std::uint32_t vocab_size = 257;
  std::uint32_t model_dim = 64;
  std::uint32_t num_layers = 2;
  std::uint32_t num_heads = 4;
  std::uint32_t ffn_hidden = 0;  // 0: derive from model_dim
  std::uint32_t max_seq_len = 128;
  double rope_theta = 10000.0;
  double rmsnorm_eps = 1e-5;
  double init_std = 0.02;

  /// round(8d/3), rounded up to an even number.
  static std::uint32_t default_ffn_hidden(std::uint32_t model_dim) noexcept;

  std::uint32_t head_dim() const noexcept { return model_dim / num_heads; }
  std::uint32_t resolved_ffn_hidden() const noexcept {
    return ffn_hidden != 0 ? ffn_hidden : default_ffn_hidden(model_dim);
  }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Position of each tensor inside ModelParams.
struct ParamLayout {
  static constexpr std::size_t kPerLayer = 6;
  enum LayerSlot : std::size_t { kAttnNorm = 0, kQkv, kAttnOut, kFfnNorm, kGateUp, kDown };

  static constexpr std::size_t embedding() noexcept { return 0; }
  static constexpr std::size_t layer(std::size_t l, LayerSlot slot) noexcept { return 1 + l * kPerLayer + slot; }
  static constexpr std::size_t final_norm(std::size_t num_layers) noexcept { return 1 + num_layers * kPerLayer; }
  static constexpr std::size_t lm_head(std::size_t num_layers) noexcept { return 2 + num_layers * kPerLayer; }
  static constexpr std::size_t count(std::size_t num_layers) noexcept { return 3 + num_layers * kPerLayer; }
};

/// Normal(0, init_std) weights, except that the attention output and MLP down
/// projections of layer l (1-indexed) use init_std / sqrt(2 l). Norm gains
/// start at 1. Deterministic in `seed`.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// y_i = w_i x_i / sqrt(mean(x^2) + eps).
void rmsnorm(std::span<const double> x, std::span<const double> w, double eps, std::span<double> y);

/// Rotates pairs (2i, 2i+1) of every head vector by pos * theta^(-2i/head_dim).
/// Layout of `x` is [heads x seq x head_dim]; positions has `seq` entries.
void rope_apply(std::span<double> x, std::size_t heads, std::size_t seq, std::size_t head_dim,
                std::span<const std::size_t> positions, double theta);

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;  // batch x seq, row-major

  TokenId at(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }
};

struct Logits {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t vocab = 0;
  std::vector<double> values;  // batch x seq x vocab

  double at(std::size_t b, std::size_t t, std::size_t v) const { return values[(b * seq + t) * vocab + v]; }
};

struct LossAndGrads {
  double loss = 0.0;  // mean token cross-entropy
  GradientSet grads;
};

class TinyDecoder {
 public:
  explicit TinyDecoder(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }

  /// Throws std::invalid_argument for out-of-range tokens or seq > max_seq_len.
  Logits forward(const ModelParams& params, const TokenBatch& tokens, bf16::Quantizer& quantizer) const;

  /// Mean cross-entropy of predicting `targets` and its gradient for every
  /// parameter tensor. Weight gradients are summed over the batch in double
  /// and quantized once.
  LossAndGrads loss_and_backward(const ModelParams& params, const TokenBatch& tokens, const TokenBatch& targets,
                                 bf16::Quantizer& quantizer) const;

 private:
  struct Workspace;

  void check_params(const ModelParams& params) const;
  void check_tokens(const TokenBatch& tokens) const;

  ModelConfig config_;
  std::vector<double> rope_cos_;  // max_seq_len x head_dim/2
  std::vector<double> rope_sin_;
};

}  // namespace desktrain
