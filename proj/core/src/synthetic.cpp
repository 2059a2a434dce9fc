// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/synthetic.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "desktrain/rng.hpp"

namespace desktrain {

std::vector<std::string> structured_corpus(std::size_t num_docs, std::uint64_t seed) {
  SplitMix64 rng(seed);
  constexpr std::size_t kPatterns = 12;
  std::vector<std::string> patterns;
  for (std::size_t p = 0; p < kPatterns; ++p) {
    const std::size_t len = 3 + rng.uniform_below(6);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>('a' + rng.uniform_below(26)));
    s.push_back(' ');
    patterns.push_back(std::move(s));
  }
  std::vector<std::string> docs;
  docs.reserve(num_docs);
  for (std::size_t d = 0; d < num_docs; ++d) {
    const auto& a = patterns[rng.uniform_below(kPatterns)];
    const auto& b = patterns[rng.uniform_below(kPatterns)];
    const std::size_t reps = 6 + rng.uniform_below(10);
    std::string doc;
    for (std::size_t r = 0; r < reps; ++r) doc += a;
    for (std::size_t r = 0; r < reps; ++r) doc += b;
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<std::string> random_corpus(std::size_t num_docs, std::size_t min_len, std::size_t max_len,
                                       std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::string> docs;
  docs.reserve(num_docs);
  for (std::size_t d = 0; d < num_docs; ++d) {
    const std::size_t len = min_len + rng.uniform_below(max_len - min_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>(' ' + rng.uniform_below(95)));
    docs.push_back(std::move(s));
  }
  return docs;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<std::string>& docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : docs) out << nlohmann::json{{"text", d}}.dump() << '\n';
}

}  // namespace desktrain
