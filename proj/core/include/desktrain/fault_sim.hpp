// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Lockstep simulation of a data-parallel job with injected failures,
// restart from the latest checkpoint, and uptime accounting on an integer
// logical clock.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "desktrain/bf16.hpp"
#include "desktrain/checkpoint.hpp"
#include "desktrain/monitor.hpp"
#include "desktrain/tensor.hpp"

namespace desktrain {

/// Entrywise mean over ranks in double precision, accumulated in rank order
/// as r0 + sum (r_i - r0) / n so that agreeing ranks average exactly, then
/// quantized. Throws std::invalid_argument for an empty or
/// shape-incongruent input.
GradientSet all_reduce_mean(std::span<const GradientSet> per_rank, bf16::Quantizer& quantizer);

/// A deterministic training job the simulator can step, snapshot and
/// rebuild.
class TrainSession {
 public:
  virtual ~TrainSession() = default;
  /// Runs the next step and returns its telemetry.
  virtual MetricsRecord step() = 0;
  virtual std::uint64_t current_step() const = 0;
  virtual CheckpointBundle snapshot() const = 0;
  virtual void restore(const CheckpointBundle& bundle) = 0;
};

/// Session that only advances a step counter; used for accounting runs.
class ClockOnlySession final : public TrainSession {
 public:
  MetricsRecord step() override;
  std::uint64_t current_step() const override { return step_; }
  CheckpointBundle snapshot() const override;
  void restore(const CheckpointBundle& bundle) override { step_ = bundle.step; }

 private:
  std::uint64_t step_ = 0;
};

using SessionFactory = std::function<std::unique_ptr<TrainSession>()>;

enum class RecoveryMode { kAuto, kManual, kNone };

std::string_view to_string(RecoveryMode mode) noexcept;
/// Accepts "auto", "manual", "none"; throws std::invalid_argument otherwise.
RecoveryMode parse_recovery_mode(std::string_view text);

/// The job fails after finishing `step`, before that step's checkpoint.
struct FailureEvent {
  std::uint64_t step = 0;
  std::uint32_t rank = 0;

  friend bool operator==(const FailureEvent&, const FailureEvent&) = default;
};

/// Exponential inter-failure gaps (in steps) with the given mean.
struct RandomFailures {
  double mtbf_steps = 500.0;
  std::uint64_t seed = 0;

  friend bool operator==(const RandomFailures&, const RandomFailures&) = default;
};

struct SimConfig {
  std::uint32_t num_ranks = 2;
  std::uint64_t steps_total = 1000;
  std::uint64_t step_wall_time = 1;  // logical seconds
  std::uint64_t checkpoint_interval = 100;
  std::uint64_t recovery_delay_auto = 50;
  std::uint64_t recovery_delay_manual = 600;
  std::vector<FailureEvent> failures;
  std::optional<RandomFailures> random_failures;
  RecoveryMode recovery_mode = RecoveryMode::kAuto;
  /// When set, checkpoints round-trip through files in this directory.
  std::optional<std::filesystem::path> checkpoint_dir;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// Scripted failures merged with the seeded random ones, sorted by step.
  std::vector<FailureEvent> failure_trace() const;

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

/// Draws a failure trace over [1, steps_total].
std::vector<FailureEvent> random_failure_trace(const RandomFailures& process, std::uint64_t steps_total,
                                               std::uint32_t num_ranks);

struct UptimeReport {
  std::uint64_t productive_time = 0;    // first executions of each step
  std::uint64_t recomputation_time = 0; // re-executions after rollback
  std::uint64_t recovery_time = 0;      // restart delays
  std::uint64_t total_time = 0;
  double uptime_fraction = 1.0;
  std::uint64_t failures_count = 0;
  std::uint64_t steps_completed = 0;
  bool completed = true;
  RecoveryMode recovery_mode = RecoveryMode::kAuto;
};

struct SimResult {
  UptimeReport report;
  std::vector<MetricsRecord> metrics;
  CheckpointBundle final_state;
};

/// Runs cfg.steps_total steps. On each failure all in-memory state is
/// discarded, the recovery delay for the mode is charged, a fresh session is
/// built from `factory` and restored from the latest checkpoint, and the lost
/// steps are recomputed. With RecoveryMode::kNone the run stops at the first
/// failure and the report has completed == false.
SimResult run_sim(const SimConfig& cfg, const SessionFactory& factory);

}  // namespace desktrain
