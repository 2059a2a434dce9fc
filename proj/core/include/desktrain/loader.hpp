// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Online tokenization and sample packing. Each data-parallel rank reads a
// disjoint split of a seeded document permutation and turns it into the
// stream tok(d1) EOS tok(d2) EOS ..., cut into fixed-length rows with no
// padding. Leftover tokens carry into the next row.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace desktrain {

using TokenId = std::int32_t;

/// Ordered UTF-8 documents. Empty documents are dropped at ingestion.
struct Corpus {
  std::vector<std::string> documents;
  std::vector<std::filesystem::path> sources;

  static Corpus from_documents(std::vector<std::string> docs);
  /// Reads {"text": "..."} per line. Throws std::runtime_error on I/O or
  /// parse failures, naming file and line.
  static Corpus from_jsonl(std::span<const std::filesystem::path> paths);

  std::size_t size() const noexcept { return documents.size(); }
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual TokenId eos_id() const noexcept = 0;
  virtual std::uint32_t vocab_size() const noexcept = 0;
};

/// Byte-level tokenizer: EOS is 0 and byte b maps to b + 1.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<TokenId> encode(std::string_view text) const override;
  TokenId eos_id() const noexcept override { return 0; }
  std::uint32_t vocab_size() const noexcept override { return 257; }
};

/// Seeded permutation of [0, n) (Fisher-Yates over SplitMix64).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Shuffles document indices with `seed` and cuts the permutation into
/// dp_degree contiguous, near-equal splits. With shuffle = false the
/// permutation is the identity. Throws std::invalid_argument when
/// dp_degree is 0, the corpus is empty, or dp_degree exceeds its size.
std::vector<std::vector<std::size_t>> shuffle_and_split(const Corpus& corpus, std::uint64_t seed,
                                                        std::uint32_t dp_degree, bool shuffle = true);

/// Resumable position of one rank's packer.
struct LoaderState {
  std::uint64_t seed = 0;
  std::uint32_t dp_degree = 1;
  std::uint32_t rank = 0;
  std::uint64_t cursor = 0;  // next unread document in this rank's epoch order
  std::vector<TokenId> carry;
  std::uint64_t epoch = 0;
  std::uint64_t sequences_emitted = 0;

  friend bool operator==(const LoaderState&, const LoaderState&) = default;
};

inline constexpr int kLoaderStateVersion = 1;

class LoaderStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned JSON record of a LoaderState.
std::string save_state(const LoaderState& state);
/// Inverse of save_state. Throws LoaderStateError on malformed, truncated
/// or version-mismatched input.
LoaderState restore_state(std::string_view record);

struct LoaderOptions {
  std::uint32_t max_seq_len = 128;
  bool shuffle = true;
  std::uint64_t max_epochs = 0;  // 0: unlimited
};

class PackingLoader {
 public:
  /// Throws std::invalid_argument for max_seq_len < 2 or an invalid rank.
  PackingLoader(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const Tokenizer> tokenizer,
                LoaderOptions options, LoaderState state);

  /// Next row of exactly max_seq_len tokens, or nullopt once the epoch
  /// limit is reached with fewer than max_seq_len tokens buffered.
  std::optional<std::vector<TokenId>> next_sequence();

  const LoaderState& state() const noexcept { return state_; }
  const LoaderOptions& options() const noexcept { return options_; }
  const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }

  /// Document indices of this rank for the given epoch, in traversal order.
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

 private:
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  LoaderOptions options_;
  LoaderState state_;
  std::vector<std::size_t> split_;
  std::vector<std::size_t> order_;
};

/// B rows of max_seq_len tokens plus the EOS positions of every row.
struct PackedBatch {
  std::vector<std::vector<TokenId>> sequences;
  std::vector<std::vector<std::uint32_t>> boundaries;
};

/// Positions of `eos` in `row`.
std::vector<std::uint32_t> eos_positions(std::span<const TokenId> row, TokenId eos);

/// Anything that yields packed rows and can report a resumable state.
class SequenceSource {
 public:
  virtual ~SequenceSource() = default;
  virtual std::optional<std::vector<TokenId>> next_sequence() = 0;
  /// State after the last sequence handed to the caller.
  virtual LoaderState state() const = 0;
  virtual TokenId eos_id() const noexcept = 0;
};

/// Stacks batch_size_per_rank rows for every rank. Returns nullopt when any
/// rank reaches end of data.
std::optional<std::vector<PackedBatch>> next_batch(std::span<SequenceSource* const> ranks,
                                                   std::uint32_t batch_size_per_rank);

}  // namespace desktrain
