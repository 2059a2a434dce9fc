// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Training telemetry and gradient-spike detection.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "desktrain/tensor.hpp"

namespace desktrain {

/// One line of the metrics log. grad_norm is the pre-clip global l2 norm.
struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double param_norm = 0.0;
  double lr = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// JSON object with exactly the MetricsRecord field names. Doubles are
/// printed with round-trip precision.
std::string to_json_line(const MetricsRecord& r);
/// Throws std::invalid_argument on malformed or incomplete records.
MetricsRecord parse_json_line(std::string_view line);

/// Append-only log with strictly increasing steps, optionally mirrored to a
/// JSONL file that is flushed after every record.
class MetricsLog {
 public:
  MetricsLog() = default;
  /// Opens `path` for writing, truncating it.
  explicit MetricsLog(const std::filesystem::path& path);

  /// Throws std::invalid_argument unless record.step exceeds the last step.
  void record_step(const MetricsRecord& record);

  /// Drops every record with step > `step` (and rewrites the file, if any).
  void truncate_after(std::uint64_t step);

  const std::vector<MetricsRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

 private:
  void rewrite_file();

  std::vector<MetricsRecord> records_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
};

/// Reads a JSONL metrics log. Throws std::runtime_error naming the line.
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Square root of the sum of squares over every tensor.
double global_l2(const TensorSet& tensors);
double global_l2(std::span<const std::span<const double>> tensors);

struct SpikeConfig {
  std::size_t window = 20;
  double threshold = 0.1;
  /// Compare against the running average frozen at spike start instead of
  /// the live window.
  bool freeze_during_spike = false;

  friend bool operator==(const SpikeConfig&, const SpikeConfig&) = default;
};

struct SpikeEvent {
  std::size_t start = 0;     // index into the series
  std::size_t duration = 0;  // steps above r + threshold
  double peak_value = 0.0;
  double baseline_r = 0.0;   // running average at start
  bool open = false;         // still above threshold when the series ended

  friend bool operator==(const SpikeEvent&, const SpikeEvent&) = default;
};

struct SpikeReport {
  std::vector<SpikeEvent> events;
  bool insufficient_data = false;  // series not longer than the window
};

/// r_t is the mean of values[t - window, t). A spike starts at t when
/// value_t > r_t + threshold and none is active; it ends at the first later
/// step with value < r + threshold. The window includes spike values.
SpikeReport detect_spikes(std::span<const double> series, const SpikeConfig& cfg = {});

struct SpikeHistogram {
  std::map<std::size_t, std::size_t> counts;  // duration -> events
  std::optional<double> single_step_fraction;
};

SpikeHistogram spike_histogram(std::span<const SpikeEvent> events);

}  // namespace desktrain
