// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "desktrain/bf16.hpp"
#include "desktrain/config.hpp"
#include "desktrain/fault_sim.hpp"
#include "desktrain/loader.hpp"
#include "desktrain/model.hpp"
#include "desktrain/optim.hpp"
#include "desktrain/prefetch.hpp"

namespace desktrain {

class EndOfData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data-parallel training job simulated in lockstep. One step: every rank
/// packs batch_size_per_rank rows, computes loss and gradients on its rows,
/// gradients are averaged across ranks, clipped by global norm, and applied
/// with AdamW at lr_at(step).
class Trainer final : public TrainSession {
 public:
  using BatchObserver = std::function<void(std::uint64_t step, std::uint32_t rank, const PackedBatch& batch)>;

  Trainer(const TrainConfig& cfg, std::shared_ptr<const Corpus> corpus);
  ~Trainer() override;

  /// Throws EndOfData when a rank runs out of documents.
  MetricsRecord step() override;
  std::uint64_t current_step() const override { return step_; }
  CheckpointBundle snapshot() const override;
  /// Throws std::invalid_argument if the bundle does not fit this config.
  void restore(const CheckpointBundle& bundle) override;

  const ModelParams& params() const noexcept { return params_; }
  const OptimState& optim_state() const noexcept { return optim_; }
  const TinyDecoder& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::uint64_t saturations() const noexcept { return quantizer_.rounding().saturations(); }

  void set_batch_observer(BatchObserver observer) { observer_ = std::move(observer); }

 private:
  void build_loaders(const std::vector<LoaderState>& states);

  TrainConfig cfg_;
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  TinyDecoder model_;
  bf16::Quantizer quantizer_;
  ModelParams params_;
  OptimState optim_;
  std::vector<std::unique_ptr<PrefetchLoader>> loaders_;
  std::uint64_t step_ = 0;
  std::uint64_t tokens_seen_ = 0;
  BatchObserver observer_;
};

/// Splits packed rows into next-token inputs/targets (row[0..n-1) -> row[1..n)).
std::pair<TokenBatch, TokenBatch> shift_for_lm(const PackedBatch& batch);

}  // namespace desktrain
