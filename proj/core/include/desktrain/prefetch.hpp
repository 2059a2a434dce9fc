// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "desktrain/loader.hpp"

namespace desktrain {

/// Runs a PackingLoader on a background thread feeding a bounded queue of
/// `depth` rows. Every queued row travels with the loader state reached
/// after producing it, so state() always describes exactly what the caller
/// has consumed. depth == 0 packs synchronously on the caller's thread.
class PrefetchLoader final : public SequenceSource {
 public:
  PrefetchLoader(PackingLoader loader, std::size_t depth);
  ~PrefetchLoader() override;

  PrefetchLoader(const PrefetchLoader&) = delete;
  PrefetchLoader& operator=(const PrefetchLoader&) = delete;

  std::optional<std::vector<TokenId>> next_sequence() override;
  LoaderState state() const override;
  TokenId eos_id() const noexcept override { return eos_; }

  std::size_t depth() const noexcept { return depth_; }

 private:
  struct Item {
    std::optional<std::vector<TokenId>> tokens;
    LoaderState after;
  };

  void produce(std::stop_token stop);

  PackingLoader loader_;
  std::size_t depth_;
  TokenId eos_;
  LoaderState consumed_;

  mutable std::mutex mu_;
  std::condition_variable_any not_full_;
  std::condition_variable_any not_empty_;
  std::deque<Item> queue_;
  std::jthread worker_;
};

}  // namespace desktrain
