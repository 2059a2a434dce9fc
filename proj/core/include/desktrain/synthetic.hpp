// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace desktrain {

/// Documents built from a small seeded vocabulary of byte patterns, each
/// document repeating one or two patterns many times. Highly predictable
/// text for convergence smoke tests.
std::vector<std::string> structured_corpus(std::size_t num_docs, std::uint64_t seed);

/// Uniformly random printable documents of random length in [min_len, max_len].
std::vector<std::string> random_corpus(std::size_t num_docs, std::size_t min_len, std::size_t max_len,
                                       std::uint64_t seed);

/// Writes {"text": ...} lines.
void write_jsonl(const std::filesystem::path& path, const std::vector<std::string>& docs);

}  // namespace desktrain
