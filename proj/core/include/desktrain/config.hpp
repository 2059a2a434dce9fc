// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Declarative experiment configuration (a single JSON file). Unknown keys
// are rejected and validation errors name the offending field path, e.g.
// "data.dp_degree: must be >= 1". Relative dataset paths resolve against
// the directory holding the config file.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "desktrain/bf16.hpp"
#include "desktrain/fault_sim.hpp"
#include "desktrain/model.hpp"
#include "desktrain/monitor.hpp"
#include "desktrain/optim.hpp"

namespace desktrain {

struct DataConfig {
  std::vector<std::filesystem::path> paths;
  std::uint64_t seed = 1234;
  std::uint32_t dp_degree = 2;
  std::uint32_t max_seq_len = 128;  // packed row length
  std::uint32_t batch_size_per_rank = 8;
  std::uint32_t prefetch_depth = 2;
  bool shuffle = true;
  std::uint64_t max_epochs = 0;  // 0: unlimited

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct NumericsConfig {
  bf16::NumericMode mode = bf16::NumericMode::kF32;
  std::uint64_t sr_seed = 0;

  friend bool operator==(const NumericsConfig&, const NumericsConfig&) = default;
};

/// Desk-scale defaults: byte vocabulary, d=64, 2 layers, 4 heads, rows of
/// 128 tokens, 2 ranks x 8 rows, 50 warmup steps out of 2000.
struct TrainConfig {
  ModelConfig model;
  std::uint64_t init_seed = 42;
  OptimConfig optim = desk_optim();
  DataConfig data;
  NumericsConfig numerics;
  SpikeConfig monitor;
  std::uint64_t checkpoint_interval = 500;  // 0 disables periodic checkpoints
  std::filesystem::path output_dir = "run";
  std::optional<SimConfig> simulation;

  static OptimConfig desk_optim() {
    OptimConfig o;
    o.warmup_steps = 50;
    o.total_steps = 2000;
    return o;
  }

  std::uint64_t global_batch() const noexcept {
    return static_cast<std::uint64_t>(data.dp_degree) * data.batch_size_per_rank;
  }
  std::uint64_t tokens_per_step() const noexcept { return global_batch() * data.max_seq_len; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses and validates a config document. `base_dir` anchors relative
/// paths. With check_paths, every dataset path must exist.
TrainConfig parse_config_json(std::string_view text, const std::filesystem::path& base_dir, bool check_paths = true);

/// Reads and parses a config file. Throws ConfigError.
TrainConfig parse_config(const std::filesystem::path& path);

/// Full effective config, every default spelled out, paths absolute.
std::string to_json(const TrainConfig& cfg);

/// Semantic checks shared by the parser and programmatic callers.
/// Throws ConfigError naming the field path.
void validate(const TrainConfig& cfg, bool check_paths);

}  // namespace desktrain
