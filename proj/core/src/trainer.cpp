// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/trainer.hpp"

#include <stdexcept>
#include <string>

namespace desktrain {

std::pair<TokenBatch, TokenBatch> shift_for_lm(const PackedBatch& batch) {
  if (batch.sequences.empty()) throw std::invalid_argument("shift_for_lm: empty batch");
  const std::size_t len = batch.sequences.front().size();
  if (len < 2) throw std::invalid_argument("shift_for_lm: rows need at least two tokens");
  TokenBatch inputs{batch.sequences.size(), len - 1, {}};
  TokenBatch targets{batch.sequences.size(), len - 1, {}};
  inputs.ids.reserve(inputs.batch * inputs.seq);
  targets.ids.reserve(targets.batch * targets.seq);
  for (const auto& row : batch.sequences) {
    if (row.size() != len) throw std::invalid_argument("shift_for_lm: ragged batch");
    inputs.ids.insert(inputs.ids.end(), row.begin(), row.end() - 1);
    targets.ids.insert(targets.ids.end(), row.begin() + 1, row.end());
  }
  return {std::move(inputs), std::move(targets)};
}

Trainer::Trainer(const TrainConfig& cfg, std::shared_ptr<const Corpus> corpus)
    : cfg_(cfg),
      corpus_(std::move(corpus)),
      tokenizer_(std::make_shared<ByteTokenizer>()),
      model_(cfg.model),
      quantizer_(cfg.numerics.mode, cfg.numerics.sr_seed) {
  validate(cfg_, false);
  if (!corpus_) throw std::invalid_argument("Trainer: corpus is required");
  params_ = init_params(cfg_.model, cfg_.init_seed);
  for (auto& t : params_) quantizer_.apply(t.data);
  optim_ = OptimState::zeros_like(params_);

  std::vector<LoaderState> states(cfg_.data.dp_degree);
  for (std::uint32_t r = 0; r < cfg_.data.dp_degree; ++r) {
    states[r].seed = cfg_.data.seed;
    states[r].dp_degree = cfg_.data.dp_degree;
    states[r].rank = r;
  }
  build_loaders(states);
}

Trainer::~Trainer() = default;

void Trainer::build_loaders(const std::vector<LoaderState>& states) {
  loaders_.clear();
  const LoaderOptions opts{cfg_.data.max_seq_len, cfg_.data.shuffle, cfg_.data.max_epochs};
  for (const auto& s : states) {
    loaders_.push_back(
        std::make_unique<PrefetchLoader>(PackingLoader(corpus_, tokenizer_, opts, s), cfg_.data.prefetch_depth));
  }
}

MetricsRecord Trainer::step() {
  std::vector<SequenceSource*> sources;
  for (auto& l : loaders_) sources.push_back(l.get());
  auto batches = next_batch(sources, cfg_.data.batch_size_per_rank);
  if (!batches) throw EndOfData("training data exhausted at step " + std::to_string(step_ + 1));
  ++step_;

  std::vector<GradientSet> rank_grads;
  rank_grads.reserve(batches->size());
  double loss = 0.0;
  for (std::size_t r = 0; r < batches->size(); ++r) {
    if (observer_) observer_(step_, static_cast<std::uint32_t>(r), (*batches)[r]);
    const auto [inputs, targets] = shift_for_lm((*batches)[r]);
    auto res = model_.loss_and_backward(params_, inputs, targets, quantizer_);
    loss += res.loss;
    rank_grads.push_back(std::move(res.grads));
  }
  loss /= static_cast<double>(batches->size());

  GradientSet grads = all_reduce_mean(rank_grads, quantizer_);
  const ClipResult clip = clip_global_norm(grads, cfg_.optim.clip_norm);
  const double lr = lr_at(step_, cfg_.optim);
  adamw_step(params_, grads, optim_, cfg_.optim, lr, quantizer_);
  tokens_seen_ += cfg_.tokens_per_step();

  return MetricsRecord{step_, tokens_seen_, loss, clip.pre_clip_norm, global_l2(params_), lr};
}

CheckpointBundle Trainer::snapshot() const {
  CheckpointBundle b;
  b.step = step_;
  b.tokens_seen = tokens_seen_;
  b.params = params_;
  b.optim = optim_;
  for (const auto& l : loaders_) b.loaders.push_back(l->state());
  b.numeric_mode = quantizer_.mode();
  b.sr_stream_state = quantizer_.stream_state();
  return b;
}

void Trainer::restore(const CheckpointBundle& b) {
  if (b.numeric_mode != quantizer_.mode()) throw std::invalid_argument("restore: numeric mode differs from config");
  params_.require_congruent(b.params, "restore (params)");
  params_.require_congruent(b.optim.m, "restore (optimizer)");
  if (b.loaders.size() != cfg_.data.dp_degree) {
    throw std::invalid_argument("restore: checkpoint has " + std::to_string(b.loaders.size()) +
                                " loader states, config expects " + std::to_string(cfg_.data.dp_degree));
  }
  step_ = b.step;
  tokens_seen_ = b.tokens_seen;
  params_ = b.params;
  optim_ = b.optim;
  quantizer_.set_stream_state(b.sr_stream_state);
  build_loaders(b.loaders);
}

}  // namespace desktrain
