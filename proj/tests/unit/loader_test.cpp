// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "desktrain/loader.hpp"
#include "desktrain/prefetch.hpp"
#include "desktrain/rng.hpp"
#include "desktrain/synthetic.hpp"

namespace desktrain {
namespace {

using Tokens = std::vector<TokenId>;

auto byte_tokenizer() { return std::make_shared<const ByteTokenizer>(); }

PackingLoader make_loader(std::shared_ptr<const Corpus> corpus, std::uint32_t max_seq_len, std::uint64_t seed,
                          std::uint32_t dp, std::uint32_t rank, bool shuffle = true, std::uint64_t max_epochs = 0) {
  LoaderState s;
  s.seed = seed;
  s.dp_degree = dp;
  s.rank = rank;
  return PackingLoader(std::move(corpus), byte_tokenizer(), LoaderOptions{max_seq_len, shuffle, max_epochs}, s);
}

// Reference stream: bytes + 1 per document, then EOS, in the given order.
Tokens expected_stream(const Corpus& corpus, const std::vector<std::size_t>& order) {
  Tokens out;
  for (std::size_t d : order) {
    for (unsigned char c : corpus.documents[d]) out.push_back(static_cast<TokenId>(c) + 1);
    out.push_back(0);
  }
  return out;
}

std::vector<Tokens> drain(PackingLoader& loader, std::size_t limit = SIZE_MAX) {
  std::vector<Tokens> rows;
  while (rows.size() < limit) {
    auto row = loader.next_sequence();
    if (!row) break;
    rows.push_back(std::move(*row));
  }
  return rows;
}

TEST(LoaderTest, ByteTokenizer) {
  ByteTokenizer tok;
  EXPECT_EQ(tok.encode("ab"), (Tokens{98, 99}));
  EXPECT_EQ(tok.encode(std::string("\0\xff", 2)), (Tokens{1, 256}));
  EXPECT_EQ(tok.eos_id(), 0);
  EXPECT_EQ(tok.vocab_size(), 257u);
}

TEST(LoaderTest, HandTraceOfPackingRules) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents({"ab", "cde", "f"}));
  auto loader = make_loader(corpus, 4, 0, 1, 0, /*shuffle=*/false, /*max_epochs=*/1);
  EXPECT_EQ(loader.next_sequence(), (Tokens{98, 99, 0, 100}));
  EXPECT_EQ(loader.state().carry, (Tokens{101, 102, 0}));
  EXPECT_EQ(loader.next_sequence(), (Tokens{101, 102, 0, 103}));
  EXPECT_EQ(loader.state().carry, (Tokens{0}));
  EXPECT_EQ(loader.next_sequence(), std::nullopt);
  EXPECT_EQ(loader.state().carry, (Tokens{0}));
}

TEST(LoaderTest, ExactLengthDocumentCarriesItsEos) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents({"abcd"}));
  auto loader = make_loader(corpus, 4, 0, 1, 0, false, 1);
  EXPECT_EQ(loader.next_sequence(), (Tokens{98, 99, 100, 101}));
  EXPECT_EQ(loader.state().carry, (Tokens{0}));
}

TEST(LoaderTest, RejectsShortRows) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents({"abc"}));
  EXPECT_THROW(make_loader(corpus, 1, 0, 1, 0), std::invalid_argument);
  EXPECT_THROW(make_loader(corpus, 4, 0, 1, 1), std::invalid_argument);
}

TEST(LoaderTest, EmptyDocumentsAreDropped) {
  const auto corpus = Corpus::from_documents({"", "x", "", "yz"});
  EXPECT_EQ(corpus.documents, (std::vector<std::string>{"x", "yz"}));
}

TEST(LoaderTest, ReadsJsonl) {
  const auto dir = std::filesystem::temp_directory_path() / "desktrain_loader_jsonl";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "a.jsonl");
    f << R"({"text": "hello"})" << '\n' << R"({"text": ""})" << '\n' << R"({"text": "wörld"})" << '\n';
  }
  const std::vector<std::filesystem::path> paths{dir / "a.jsonl"};
  const auto corpus = Corpus::from_jsonl(paths);
  EXPECT_EQ(corpus.documents, (std::vector<std::string>{"hello", "w\xc3\xb6rld"}));

  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"text": "ok"})" << '\n' << "{not json" << '\n';
  }
  const std::vector<std::filesystem::path> bad{dir / "bad.jsonl"};
  EXPECT_THROW(Corpus::from_jsonl(bad), std::runtime_error);
  const std::vector<std::filesystem::path> missing{dir / "missing.jsonl"};
  EXPECT_THROW(Corpus::from_jsonl(missing), std::runtime_error);
}

TEST(LoaderTest, ShuffleAndSplitPartitions) {
  const auto corpus = Corpus::from_documents({"a", "b", "c", "d"});
  const auto one = shuffle_and_split(corpus, 9, 1);
  ASSERT_EQ(one.size(), 1u);
  auto sorted = one[0];
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3}));

  const auto two = shuffle_and_split(corpus, 9, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].size(), 2u);
  EXPECT_EQ(two[1].size(), 2u);
  std::set<std::size_t> all(two[0].begin(), two[0].end());
  all.insert(two[1].begin(), two[1].end());
  EXPECT_EQ(all.size(), 4u);

  EXPECT_EQ(shuffle_and_split(corpus, 9, 2), two);
  EXPECT_THROW(shuffle_and_split(corpus, 9, 5), std::invalid_argument);
  EXPECT_THROW(shuffle_and_split(corpus, 9, 0), std::invalid_argument);
  EXPECT_THROW(shuffle_and_split(Corpus{}, 9, 1), std::invalid_argument);
}

TEST(LoaderTest, SplitsAreNearEqualContiguousCutsOfThePermutation) {
  const auto corpus = Corpus::from_documents(random_corpus(103, 1, 5, 2));
  const auto perm = seeded_permutation(corpus.size(), 44);
  for (std::uint32_t dp : {1u, 2u, 3u, 7u, 103u}) {
    const auto splits = shuffle_and_split(corpus, 44, dp);
    std::vector<std::size_t> joined;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& s : splits) {
      joined.insert(joined.end(), s.begin(), s.end());
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    EXPECT_EQ(joined, perm) << dp;
    EXPECT_LE(hi - lo, 1u) << dp;
  }
}

TEST(LoaderTest, NoLossOrDuplicationAcrossEpochs) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(200, 0, 40, 3)));
  for (std::uint32_t rank = 0; rank < 3; ++rank) {
    auto loader = make_loader(corpus, 16, 77, 3, rank, true, 3);
    Tokens got;
    for (const auto& row : drain(loader)) {
      ASSERT_EQ(row.size(), 16u);
      got.insert(got.end(), row.begin(), row.end());
    }
    got.insert(got.end(), loader.state().carry.begin(), loader.state().carry.end());
    Tokens want;
    for (std::uint64_t e = 0; e < 3; ++e) {
      const auto part = expected_stream(*corpus, loader.epoch_order(e));
      want.insert(want.end(), part.begin(), part.end());
    }
    EXPECT_EQ(got, want) << "rank " << rank;
  }
}

TEST(LoaderTest, EpochOrdersPermuteTheSameSplit) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(50, 1, 10, 4)));
  auto loader = make_loader(corpus, 8, 5, 2, 1);
  const auto split = shuffle_and_split(*corpus, 5, 2)[1];
  EXPECT_EQ(loader.epoch_order(0), split);
  auto e1 = loader.epoch_order(1);
  EXPECT_NE(e1, split);
  std::sort(e1.begin(), e1.end());
  auto s = split;
  std::sort(s.begin(), s.end());
  EXPECT_EQ(e1, s);
}

TEST(LoaderTest, RanksShareNoDocumentsWithinAnEpoch) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(101, 1, 30, 6)));
  std::multiset<std::size_t> seen;
  for (std::uint32_t rank = 0; rank < 2; ++rank) {
    auto loader = make_loader(corpus, 32, 8, 2, rank, true, 1);
    const auto order = loader.epoch_order(0);
    seen.insert(order.begin(), order.end());
    // Every emitted token is attributed to this rank's documents by the
    // reconstruction property.
    Tokens got;
    for (const auto& row : drain(loader)) got.insert(got.end(), row.begin(), row.end());
    got.insert(got.end(), loader.state().carry.begin(), loader.state().carry.end());
    EXPECT_EQ(got, expected_stream(*corpus, order));
  }
  EXPECT_EQ(seen.size(), corpus->size());
  for (std::size_t d = 0; d < corpus->size(); ++d) EXPECT_EQ(seen.count(d), 1u);
}

TEST(LoaderTest, StreamIsAPureFunctionOfInputs) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(80, 0, 50, 7)));
  auto a = make_loader(corpus, 24, 1, 2, 0, true, 2);
  auto b = make_loader(corpus, 24, 1, 2, 0, true, 2);
  EXPECT_EQ(drain(a), drain(b));
  auto c = make_loader(corpus, 24, 2, 2, 0, true, 2);
  auto d = make_loader(corpus, 24, 1, 2, 0, true, 2);
  EXPECT_NE(drain(c), drain(d));
}

TEST(LoaderTest, StateRecordRoundTrip) {
  LoaderState s;
  s.seed = 0xfedcba9876543210ull;
  s.dp_degree = 4;
  s.rank = 3;
  s.cursor = 17;
  s.carry = {5, 0, 256};
  s.epoch = 2;
  s.sequences_emitted = 99;
  const std::string rec = save_state(s);
  EXPECT_EQ(restore_state(rec), s);
}

TEST(LoaderTest, MalformedRecordsAreRejected) {
  LoaderState s;
  s.carry = {1, 2, 3};
  const std::string rec = save_state(s);
  EXPECT_THROW(restore_state(rec.substr(0, rec.size() / 2)), LoaderStateError);
  EXPECT_THROW(restore_state(""), LoaderStateError);
  EXPECT_THROW(restore_state("[]"), LoaderStateError);

  auto patch = [&](const std::string& from, const std::string& to) {
    std::string r = rec;
    const auto pos = r.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    return r.replace(pos, from.size(), to);
  };
  EXPECT_THROW(restore_state(patch("\"format_version\":1", "\"format_version\":2")), LoaderStateError);
  EXPECT_THROW(restore_state(patch("\"epoch\"", "\"epochs\"")), LoaderStateError);
  EXPECT_THROW(restore_state(patch("\"rank\":0", "\"rank\":\"zero\"")), LoaderStateError);
}

TEST(LoaderTest, ResumeAtRandomBoundariesIsInvisible) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(300, 0, 90, 8)));
  auto reference = make_loader(corpus, 32, 12, 2, 1, true, 3);
  const auto rows = drain(reference);
  ASSERT_GT(rows.size(), 100u);

  SplitMix64 g(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = g.uniform_below(rows.size());
    auto first = make_loader(corpus, 32, 12, 2, 1, true, 3);
    drain(first, k);
    const std::string record = save_state(first.state());
    PackingLoader resumed(corpus, byte_tokenizer(), LoaderOptions{32, true, 3}, restore_state(record));
    const auto rest = drain(resumed);
    ASSERT_EQ(rest.size(), rows.size() - k);
    EXPECT_TRUE(std::equal(rest.begin(), rest.end(), rows.begin() + static_cast<std::ptrdiff_t>(k))) << k;
  }
}

TEST(LoaderTest, PrefetchIsTransparent) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(150, 0, 70, 9)));
  auto base = make_loader(corpus, 20, 3, 1, 0, true, 2);
  const auto rows = drain(base);
  for (std::size_t depth : {0u, 1u, 4u}) {
    PrefetchLoader pre(make_loader(corpus, 20, 3, 1, 0, true, 2), depth);
    auto replay = make_loader(corpus, 20, 3, 1, 0, true, 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ASSERT_EQ(pre.next_sequence(), rows[i]) << "depth " << depth << " row " << i;
      replay.next_sequence();
      ASSERT_EQ(pre.state(), replay.state());
    }
    EXPECT_EQ(pre.next_sequence(), std::nullopt);
    EXPECT_EQ(pre.next_sequence(), std::nullopt);
    EXPECT_EQ(pre.state(), base.state());
  }
}

TEST(LoaderTest, PrefetchCanBeDestroyedMidStream) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(40, 1, 50, 10)));
  for (int i = 0; i < 20; ++i) {
    PrefetchLoader pre(make_loader(corpus, 8, 1, 1, 0), 4);
    pre.next_sequence();
  }
}

TEST(LoaderTest, NextBatchStacksRows) {
  auto corpus = std::make_shared<const Corpus>(Corpus::from_documents(random_corpus(60, 1, 30, 11)));
  PrefetchLoader r0(make_loader(corpus, 12, 4, 2, 0, true, 1), 0);
  PrefetchLoader r1(make_loader(corpus, 12, 4, 2, 1, true, 1), 2);
  auto ref0 = make_loader(corpus, 12, 4, 2, 0, true, 1);
  auto ref1 = make_loader(corpus, 12, 4, 2, 1, true, 1);
  std::vector<SequenceSource*> ranks{&r0, &r1};
  const auto batch = next_batch(ranks, 3);
  ASSERT_TRUE(batch);
  ASSERT_EQ(batch->size(), 2u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ((*batch)[0].sequences[i], ref0.next_sequence());
    EXPECT_EQ((*batch)[1].sequences[i], ref1.next_sequence());
    EXPECT_EQ((*batch)[0].boundaries[i], eos_positions((*batch)[0].sequences[i], 0));
  }
  // Batch of one equals next_sequence.
  const auto single = next_batch(ranks, 1);
  ASSERT_TRUE(single);
  EXPECT_EQ((*single)[0].sequences[0], ref0.next_sequence());

  // Drains to end of data.
  std::optional<std::vector<PackedBatch>> b;
  do {
    b = next_batch(ranks, 4);
  } while (b);
}

TEST(LoaderTest, EosPositions) {
  const Tokens row{5, 0, 7, 0, 0};
  EXPECT_EQ(eos_positions(row, 0), (std::vector<std::uint32_t>{1, 3, 4}));
}

}  // namespace
}  // namespace desktrain
