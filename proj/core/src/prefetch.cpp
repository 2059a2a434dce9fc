// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/prefetch.hpp"

namespace desktrain {

PrefetchLoader::PrefetchLoader(PackingLoader loader, std::size_t depth)
    : loader_(std::move(loader)), depth_(depth), eos_(loader_.tokenizer().eos_id()), consumed_(loader_.state()) {
  if (depth_ > 0) {
    worker_ = std::jthread([this](std::stop_token stop) { produce(stop); });
  }
}

PrefetchLoader::~PrefetchLoader() {
  if (worker_.joinable()) {
    worker_.request_stop();
    not_full_.notify_all();
    worker_.join();
  }
}

void PrefetchLoader::produce(std::stop_token stop) {
  while (!stop.stop_requested()) {
    Item item;
    item.tokens = loader_.next_sequence();
    item.after = loader_.state();
    const bool end = !item.tokens.has_value();
    {
      std::unique_lock lock(mu_);
      not_full_.wait(lock, stop, [this] { return queue_.size() < depth_; });
      if (stop.stop_requested()) return;
      queue_.push_back(std::move(item));
    }
    not_empty_.notify_one();
    if (end) return;
  }
}

std::optional<std::vector<TokenId>> PrefetchLoader::next_sequence() {
  if (depth_ == 0) {
    auto row = loader_.next_sequence();
    consumed_ = loader_.state();
    return row;
  }
  std::unique_lock lock(mu_);
  not_empty_.wait(lock, [this] { return !queue_.empty(); });
  if (!queue_.front().tokens) {
    // End-of-data marker stays queued so later calls keep returning nullopt.
    consumed_ = queue_.front().after;
    return std::nullopt;
  }
  Item item = std::move(queue_.front());
  queue_.pop_front();
  consumed_ = std::move(item.after);
  lock.unlock();
  not_full_.notify_one();
  return std::move(item.tokens);
}

LoaderState PrefetchLoader::state() const {
  std::lock_guard lock(mu_);
  return consumed_;
}

}  // namespace desktrain
