// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container: "DTCKPT01" magic, u32 format version, u32 section
// count, then length-prefixed sections (u32 tag, u64 byte length, payload),
// then a u32 CRC-32 over everything before it. All integers and doubles are
// little-endian. Every section payload starts with the u64 step it belongs to.
//
//   META  JSON: tokens_seen, numeric_mode, sr_stream_state
//   PARM  tensor set (f64 data)
//   OPTM  u64 optimizer t, first-moment tensor set, second-moment tensor set
//   LOAD  JSON array of loader state records

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "desktrain/bf16.hpp"
#include "desktrain/loader.hpp"
#include "desktrain/optim.hpp"
#include "desktrain/tensor.hpp"

namespace desktrain {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBundle {
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  ModelParams params;
  OptimState optim;
  std::vector<LoaderState> loaders;  // one per data-parallel rank
  bf16::NumericMode numeric_mode = bf16::NumericMode::kF32;
  std::uint64_t sr_stream_state = 0;

  friend bool operator==(const CheckpointBundle&, const CheckpointBundle&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& bundle);
/// Throws CheckpointError on a bad magic, version, checksum or layout.
CheckpointBundle deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to `path` atomically (temporary file, then rename).
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace desktrain
