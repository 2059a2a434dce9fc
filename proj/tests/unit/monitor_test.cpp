// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include <gtest/gtest.h>

#include "desktrain/monitor.hpp"
#include "desktrain/rng.hpp"

namespace desktrain {
namespace {

namespace fs = std::filesystem;

MetricsRecord rec(std::uint64_t step, double loss = 1.0) {
  return MetricsRecord{step, step * 100, loss, 0.5, 10.0, 1e-4};
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "desktrain_monitor_test";
  fs::create_directories(dir);
  return dir / name;
}

// Straightforward scan: r is the mean of the previous `window` values.
std::vector<SpikeEvent> brute_force(const std::vector<double>& s, std::size_t window, double threshold) {
  std::vector<SpikeEvent> out;
  std::optional<SpikeEvent> cur;
  for (std::size_t t = window; t < s.size(); ++t) {
    double r = 0.0;
    for (std::size_t k = 1; k <= window; ++k) r += s[t - k];
    r /= static_cast<double>(window);
    if (!cur) {
      if (s[t] > r + threshold) cur = SpikeEvent{t, 0, s[t], r, false};
    } else if (s[t] < r + threshold) {
      cur->duration = t - cur->start;
      out.push_back(*cur);
      cur.reset();
    } else if (s[t] > cur->peak_value) {
      cur->peak_value = s[t];
    }
  }
  if (cur) {
    cur->duration = s.size() - cur->start;
    cur->open = true;
    out.push_back(*cur);
  }
  return out;
}

TEST(MonitorTest, RecordStepEnforcesMonotoneSteps) {
  MetricsLog log;
  log.record_step(rec(1));
  log.record_step(rec(2));
  EXPECT_EQ(log.size(), 2u);
  EXPECT_THROW(log.record_step(rec(2)), std::invalid_argument);
  EXPECT_THROW(log.record_step(rec(1)), std::invalid_argument);
  MetricsRecord negative = rec(3);
  negative.grad_norm = -1.0;
  EXPECT_THROW(log.record_step(negative), std::invalid_argument);
  EXPECT_EQ(log.size(), 2u);
}

TEST(MonitorTest, JsonLineRoundTrip) {
  SplitMix64 g(1);
  for (int i = 0; i < 200; ++i) {
    MetricsRecord r{g.next() >> 1, g.next() >> 1, g.normal() * 1e3, std::fabs(g.normal()), g.next_unit(),
                    g.next_unit() * 1e-3};
    EXPECT_EQ(parse_json_line(to_json_line(r)), r);
  }
  const std::string line = to_json_line(rec(7));
  for (const char* field : {"\"step\"", "\"tokens_seen\"", "\"loss\"", "\"grad_norm\"", "\"param_norm\"", "\"lr\""}) {
    EXPECT_NE(line.find(field), std::string::npos) << field;
  }
  EXPECT_THROW(parse_json_line("{\"step\": 1}"), std::invalid_argument);
  EXPECT_THROW(parse_json_line("not json"), std::invalid_argument);
}

TEST(MonitorTest, FileLogRoundTripAndTruncate) {
  const auto path = temp_file("metrics.jsonl");
  std::vector<MetricsRecord> written;
  {
    MetricsLog log(path);
    SplitMix64 g(2);
    for (std::uint64_t s = 1; s <= 50; ++s) {
      MetricsRecord r = rec(s, g.normal());
      log.record_step(r);
      written.push_back(r);
    }
    EXPECT_EQ(read_metrics(path), written);  // flushed per record
    log.truncate_after(20);
    EXPECT_EQ(log.size(), 20u);
    log.record_step(rec(21, 0.25));
  }
  const auto back = read_metrics(path);
  ASSERT_EQ(back.size(), 21u);
  EXPECT_TRUE(std::equal(back.begin(), back.begin() + 20, written.begin()));
  EXPECT_EQ(back[20].loss, 0.25);

  {
    std::ofstream bad(temp_file("bad.jsonl"));
    bad << to_json_line(rec(1)) << "\n{oops\n";
  }
  EXPECT_THROW(read_metrics(temp_file("bad.jsonl")), std::runtime_error);
}

TEST(MonitorTest, GlobalL2) {
  TensorSet zero;
  zero.push_back(Tensor("a", {3}));
  EXPECT_EQ(global_l2(zero), 0.0);

  TensorSet one;
  one.push_back(Tensor("a", {2}));
  one[0].data = {3.0, 4.0};
  EXPECT_EQ(global_l2(one), 5.0);

  SplitMix64 g(3);
  TensorSet two;
  two.push_back(Tensor("a", {7}));
  two.push_back(Tensor("b", {11}));
  std::vector<double> flat;
  for (auto& t : two) {
    for (double& v : t.data) {
      v = g.normal();
      flat.push_back(v);
    }
  }
  TensorSet joined;
  joined.push_back(Tensor("ab", {18}));
  joined[0].data = flat;
  EXPECT_NEAR(global_l2(two), global_l2(joined), 1e-15);
  const std::span<const double> parts[] = {two[0].data, two[1].data};
  EXPECT_EQ(global_l2(std::span<const std::span<const double>>(parts)), global_l2(two));
}

TEST(MonitorTest, ConstantSeriesHasNoSpikes) {
  const std::vector<double> s(100, 2.5);
  const auto rep = detect_spikes(s);
  EXPECT_TRUE(rep.events.empty());
  EXPECT_FALSE(rep.insufficient_data);
}

TEST(MonitorTest, SingleStepSpike) {
  std::vector<double> s(25, 1.0);
  s.push_back(1.2);
  for (int i = 0; i < 10; ++i) s.push_back(1.0);
  const auto rep = detect_spikes(s);
  ASSERT_EQ(rep.events.size(), 1u);
  EXPECT_EQ(rep.events[0].start, 25u);  // step 26, 1-indexed
  EXPECT_EQ(rep.events[0].duration, 1u);
  EXPECT_EQ(rep.events[0].peak_value, 1.2);
  EXPECT_EQ(rep.events[0].baseline_r, 1.0);
  EXPECT_FALSE(rep.events[0].open);
}

TEST(MonitorTest, PlateauSpike) {
  std::vector<double> s(25, 1.0);
  for (int i = 0; i < 3; ++i) s.push_back(1.5);
  for (int i = 0; i < 10; ++i) s.push_back(1.0);
  const auto rep = detect_spikes(s);
  ASSERT_EQ(rep.events.size(), 1u);
  EXPECT_EQ(rep.events[0].duration, 3u);
  EXPECT_EQ(brute_force(s, 20, 0.1), rep.events);
}

TEST(MonitorTest, ShortSeriesIsFlagged) {
  const std::vector<double> s(20, 1.0);
  const auto rep = detect_spikes(s);
  EXPECT_TRUE(rep.insufficient_data);
  EXPECT_TRUE(rep.events.empty());
}

TEST(MonitorTest, SpikeOpenAtEndIsReported) {
  std::vector<double> s(30, 1.0);
  s.push_back(3.0);
  s.push_back(3.0);
  const auto rep = detect_spikes(s);
  ASSERT_EQ(rep.events.size(), 1u);
  EXPECT_TRUE(rep.events[0].open);
  EXPECT_EQ(rep.events[0].duration, 2u);
}

TEST(MonitorTest, FrozenBaselineOption) {
  // A long plateau eventually drags the live average up and ends the spike;
  // a frozen baseline keeps it open.
  std::vector<double> s(25, 1.0);
  for (int i = 0; i < 40; ++i) s.push_back(1.5);
  for (int i = 0; i < 5; ++i) s.push_back(1.0);
  const auto live = detect_spikes(s);
  SpikeConfig frozen_cfg;
  frozen_cfg.freeze_during_spike = true;
  const auto frozen = detect_spikes(s, frozen_cfg);
  ASSERT_FALSE(live.events.empty());
  ASSERT_EQ(frozen.events.size(), 1u);
  EXPECT_EQ(frozen.events[0].duration, 40u);
  EXPECT_LT(live.events[0].duration, 40u);
}

TEST(MonitorTest, MatchesBruteForceOnRandomSeries) {
  SplitMix64 g(4);
  std::size_t total_events = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 21 + g.uniform_below(300);
    std::vector<double> s(n);
    const double base = 0.5 + 2.0 * g.next_unit();
    for (double& v : s) {
      v = base + 0.05 * g.normal();
      if (g.next_unit() < 0.05) v += 0.5 * g.next_unit();
    }
    const auto rep = detect_spikes(s);
    const auto oracle = brute_force(s, 20, 0.1);
    ASSERT_EQ(rep.events.size(), oracle.size()) << trial;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_EQ(rep.events[i].start, oracle[i].start);
      EXPECT_EQ(rep.events[i].duration, oracle[i].duration);
      EXPECT_EQ(rep.events[i].open, oracle[i].open);
      EXPECT_EQ(rep.events[i].peak_value, oracle[i].peak_value);
      EXPECT_NEAR(rep.events[i].baseline_r, oracle[i].baseline_r, 1e-12);
    }
    // Ordered, non-overlapping, never inside the warm-up window.
    for (std::size_t i = 0; i < rep.events.size(); ++i) {
      EXPECT_GE(rep.events[i].start, 20u);
      EXPECT_GE(rep.events[i].duration, 1u);
      EXPECT_GT(rep.events[i].peak_value, rep.events[i].baseline_r + 0.1);
      if (i > 0) EXPECT_GE(rep.events[i].start, rep.events[i - 1].start + rep.events[i - 1].duration);
    }
    total_events += rep.events.size();
  }
  EXPECT_GT(total_events, 1000u);
}

TEST(MonitorTest, ShiftPreservesEvents) {
  SplitMix64 g(5);
  for (int trial = 0; trial < 200; ++trial) {
    // Dyadic values keep every window sum exact, so the shift is exact too.
    std::vector<double> s(120);
    for (double& v : s) v = static_cast<double>(g.uniform_below(64)) / 64.0 + (g.next_unit() < 0.05 ? 0.5 : 0.0);
    const double c = static_cast<double>(g.uniform_below(512)) / 16.0 - 8.0;
    std::vector<double> shifted = s;
    for (double& v : shifted) v += c;
    const auto a = detect_spikes(s).events;
    const auto b = detect_spikes(shifted).events;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].start, b[i].start);
      EXPECT_EQ(a[i].duration, b[i].duration);
      EXPECT_EQ(a[i].peak_value + c, b[i].peak_value);
      EXPECT_NEAR(a[i].baseline_r + c, b[i].baseline_r, 1e-12);
    }
  }
}

TEST(MonitorTest, HistogramCounts) {
  const auto empty = spike_histogram({});
  EXPECT_TRUE(empty.counts.empty());
  EXPECT_FALSE(empty.single_step_fraction.has_value());

  const std::vector<SpikeEvent> ev{{30, 1, 2, 1, false}, {60, 1, 2, 1, false}, {90, 2, 2, 1, false}};
  const auto h = spike_histogram(ev);
  EXPECT_EQ(h.counts, (std::map<std::size_t, std::size_t>{{1, 2}, {2, 1}}));
  ASSERT_TRUE(h.single_step_fraction);
  EXPECT_DOUBLE_EQ(*h.single_step_fraction, 2.0 / 3.0);
}

TEST(MonitorTest, ConstructedSeriesHistogramMatchesConstruction) {
  SplitMix64 g(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(30, 1.0);
    std::map<std::size_t, std::size_t> built;
    const std::size_t spikes = 5 + g.uniform_below(30);
    for (std::size_t k = 0; k < spikes; ++k) {
      // A plateau at 2.0 stays above the rising average for up to 10 steps;
      // 25 quiet steps afterwards flush it out of the window.
      const std::size_t d = 1 + g.uniform_below(10);
      ++built[d];
      s.insert(s.end(), d, 2.0);
      s.insert(s.end(), 25, 1.0);
    }
    const auto h = spike_histogram(detect_spikes(s).events);
    EXPECT_EQ(h.counts, built);
  }
}

}  // namespace
}  // namespace desktrain
