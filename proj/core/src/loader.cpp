// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/loader.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "desktrain/rng.hpp"

namespace desktrain {

using nlohmann::json;

Corpus Corpus::from_documents(std::vector<std::string> docs) {
  Corpus c;
  c.documents.reserve(docs.size());
  for (auto& d : docs) {
    if (!d.empty()) c.documents.push_back(std::move(d));
  }
  return c;
}

Corpus Corpus::from_jsonl(std::span<const std::filesystem::path> paths) {
  Corpus c;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": expected an object with a string \"text\" field");
      }
      auto text = rec["text"].get<std::string>();
      if (!text.empty()) c.documents.push_back(std::move(text));
    }
    c.sources.push_back(path);
  }
  return c;
}

std::vector<TokenId> ByteTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char b : text) out.push_back(static_cast<TokenId>(b) + 1);
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> shuffle_and_split(const Corpus& corpus, std::uint64_t seed,
                                                        std::uint32_t dp_degree, bool shuffle) {
  const std::size_t n = corpus.size();
  if (dp_degree == 0) throw std::invalid_argument("shuffle_and_split: dp_degree must be >= 1");
  if (n == 0) throw std::invalid_argument("shuffle_and_split: corpus is empty");
  if (dp_degree > n) {
    throw std::invalid_argument("shuffle_and_split: dp_degree " + std::to_string(dp_degree) +
                                " exceeds document count " + std::to_string(n));
  }
  std::vector<std::size_t> perm;
  if (shuffle) {
    perm = seeded_permutation(n, seed);
  } else {
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
  }
  std::vector<std::vector<std::size_t>> splits(dp_degree);
  for (std::uint32_t r = 0; r < dp_degree; ++r) {
    const std::size_t begin = n * r / dp_degree;
    const std::size_t end = n * (r + 1) / dp_degree;
    splits[r].assign(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return splits;
}

std::string save_state(const LoaderState& s) {
  json j = {
      {"format_version", kLoaderStateVersion},
      {"seed", s.seed},
      {"dp_degree", s.dp_degree},
      {"rank", s.rank},
      {"cursor", s.cursor},
      {"carry", s.carry},
      {"epoch", s.epoch},
      {"sequences_emitted", s.sequences_emitted},
  };
  return j.dump();
}

namespace {

template <typename T>
T require_unsigned(const json& j, const char* key) {
  if (!j.contains(key)) throw LoaderStateError(std::string("loader state: missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw LoaderStateError(std::string("loader state: field '") + key + "' must be a non-negative integer");
  }
  const auto raw = v.get<std::uint64_t>();
  if (raw > std::numeric_limits<T>::max()) {
    throw LoaderStateError(std::string("loader state: field '") + key + "' out of range");
  }
  return static_cast<T>(raw);
}

}  // namespace

LoaderState restore_state(std::string_view record) {
  json j;
  try {
    j = json::parse(record);
  } catch (const json::parse_error& e) {
    throw LoaderStateError(std::string("loader state: malformed record: ") + e.what());
  }
  if (!j.is_object()) throw LoaderStateError("loader state: record is not a JSON object");
  const auto version = require_unsigned<std::uint32_t>(j, "format_version");
  if (version != kLoaderStateVersion) {
    throw LoaderStateError("loader state: unsupported format_version " + std::to_string(version));
  }
  static constexpr std::array kKnown = {"format_version", "seed",  "dp_degree", "rank",
                                        "cursor",         "carry", "epoch",     "sequences_emitted"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw LoaderStateError("loader state: unknown field '" + key + "'");
    }
  }
  LoaderState s;
  s.seed = require_unsigned<std::uint64_t>(j, "seed");
  s.dp_degree = require_unsigned<std::uint32_t>(j, "dp_degree");
  s.rank = require_unsigned<std::uint32_t>(j, "rank");
  s.cursor = require_unsigned<std::uint64_t>(j, "cursor");
  s.epoch = require_unsigned<std::uint64_t>(j, "epoch");
  s.sequences_emitted = require_unsigned<std::uint64_t>(j, "sequences_emitted");
  if (!j.contains("carry") || !j["carry"].is_array()) {
    throw LoaderStateError("loader state: field 'carry' must be an array");
  }
  for (const auto& t : j["carry"]) {
    if (!t.is_number_integer()) throw LoaderStateError("loader state: carry holds a non-integer token");
    const auto v = t.get<std::int64_t>();
    if (v < 0 || v > std::numeric_limits<TokenId>::max()) {
      throw LoaderStateError("loader state: carry token out of range");
    }
    s.carry.push_back(static_cast<TokenId>(v));
  }
  if (s.dp_degree == 0 || s.rank >= s.dp_degree) {
    throw LoaderStateError("loader state: rank must lie in [0, dp_degree)");
  }
  return s;
}

PackingLoader::PackingLoader(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const Tokenizer> tokenizer,
                             LoaderOptions options, LoaderState state)
    : corpus_(std::move(corpus)), tokenizer_(std::move(tokenizer)), options_(options), state_(std::move(state)) {
  if (!corpus_ || !tokenizer_) throw std::invalid_argument("PackingLoader: corpus and tokenizer are required");
  if (options_.max_seq_len < 2) throw std::invalid_argument("PackingLoader: max_seq_len must be >= 2");
  if (state_.dp_degree == 0 || state_.rank >= state_.dp_degree) {
    throw std::invalid_argument("PackingLoader: rank must lie in [0, dp_degree)");
  }
  split_ = std::move(shuffle_and_split(*corpus_, state_.seed, state_.dp_degree, options_.shuffle)[state_.rank]);
  order_ = epoch_order(state_.epoch);
  if (state_.cursor > order_.size()) throw std::invalid_argument("PackingLoader: cursor beyond rank split");
}

std::vector<std::size_t> PackingLoader::epoch_order(std::uint64_t epoch) const {
  if (epoch == 0 || !options_.shuffle) return split_;
  const auto perm = seeded_permutation(split_.size(), state_.seed ^ epoch);
  std::vector<std::size_t> order(split_.size());
  for (std::size_t i = 0; i < perm.size(); ++i) order[i] = split_[perm[i]];
  return order;
}

std::optional<std::vector<TokenId>> PackingLoader::next_sequence() {
  const std::size_t len = options_.max_seq_len;
  while (state_.carry.size() < len) {
    if (state_.cursor == order_.size()) {
      if (options_.max_epochs != 0 && state_.epoch + 1 >= options_.max_epochs) return std::nullopt;
      ++state_.epoch;
      state_.cursor = 0;
      order_ = epoch_order(state_.epoch);
    }
    const auto tokens = tokenizer_->encode(corpus_->documents[order_[state_.cursor]]);
    state_.carry.insert(state_.carry.end(), tokens.begin(), tokens.end());
    state_.carry.push_back(tokenizer_->eos_id());
    ++state_.cursor;
  }
  std::vector<TokenId> row(state_.carry.begin(), state_.carry.begin() + static_cast<std::ptrdiff_t>(len));
  state_.carry.erase(state_.carry.begin(), state_.carry.begin() + static_cast<std::ptrdiff_t>(len));
  ++state_.sequences_emitted;
  return row;
}

std::vector<std::uint32_t> eos_positions(std::span<const TokenId> row, TokenId eos) {
  std::vector<std::uint32_t> pos;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] == eos) pos.push_back(static_cast<std::uint32_t>(i));
  }
  return pos;
}

std::optional<std::vector<PackedBatch>> next_batch(std::span<SequenceSource* const> ranks,
                                                   std::uint32_t batch_size_per_rank) {
  std::vector<PackedBatch> out(ranks.size());
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    for (std::uint32_t b = 0; b < batch_size_per_rank; ++b) {
      auto seq = ranks[r]->next_sequence();
      if (!seq) return std::nullopt;
      out[r].boundaries.push_back(eos_positions(*seq, ranks[r]->eos_id()));
      out[r].sequences.push_back(std::move(*seq));
    }
  }
  return out;
}

}  // namespace desktrain
