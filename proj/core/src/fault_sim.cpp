// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/fault_sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "desktrain/rng.hpp"

namespace desktrain {

GradientSet all_reduce_mean(std::span<const GradientSet> per_rank, bf16::Quantizer& quantizer) {
  if (per_rank.empty()) throw std::invalid_argument("all_reduce_mean: no ranks");
  for (const auto& g : per_rank) per_rank[0].require_congruent(g, "all_reduce_mean");
  // Shifted mean r0 + sum_i (r_i - r0) / n, accumulated in rank order. It is
  // exact whenever the ranks agree, which a plain sum / n is not.
  GradientSet out = per_rank[0];
  const auto n = static_cast<double>(per_rank.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& dst = out[i].data;
    const auto& base = per_rank[0][i].data;
    std::vector<double> delta(dst.size(), 0.0);
    for (std::size_t r = 1; r < per_rank.size(); ++r) {
      const auto& src = per_rank[r][i].data;
      for (std::size_t j = 0; j < dst.size(); ++j) delta[j] += src[j] - base[j];
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = base[j] + delta[j] / n;
    quantizer.apply(dst);
  }
  return out;
}

MetricsRecord ClockOnlySession::step() {
  ++step_;
  MetricsRecord r;
  r.step = step_;
  return r;
}

CheckpointBundle ClockOnlySession::snapshot() const {
  CheckpointBundle b;
  b.step = step_;
  return b;
}

std::string_view to_string(RecoveryMode mode) noexcept {
  switch (mode) {
    case RecoveryMode::kAuto: return "auto";
    case RecoveryMode::kManual: return "manual";
    case RecoveryMode::kNone: return "none";
  }
  return "unknown";
}

RecoveryMode parse_recovery_mode(std::string_view text) {
  if (text == "auto") return RecoveryMode::kAuto;
  if (text == "manual") return RecoveryMode::kManual;
  if (text == "none") return RecoveryMode::kNone;
  throw std::invalid_argument("unknown recovery mode '" + std::string(text) + "' (expected auto, manual or none)");
}

void SimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("simulation config: " + msg); };
  if (num_ranks == 0) fail("num_ranks must be >= 1");
  if (steps_total == 0) fail("steps_total must be >= 1");
  if (step_wall_time == 0) fail("step_wall_time must be >= 1");
  if (checkpoint_interval == 0) fail("checkpoint_interval must be >= 1");
  for (const auto& f : failures) {
    if (f.step == 0 || f.step > steps_total) fail("failure step " + std::to_string(f.step) + " outside [1, steps_total]");
    if (f.rank >= num_ranks) fail("failure rank " + std::to_string(f.rank) + " outside [0, num_ranks)");
  }
  if (random_failures && !(random_failures->mtbf_steps > 0.0)) fail("mtbf_steps must be positive");
}

std::vector<FailureEvent> random_failure_trace(const RandomFailures& process, std::uint64_t steps_total,
                                               std::uint32_t num_ranks) {
  std::vector<FailureEvent> out;
  SplitMix64 rng(process.seed);
  double t = 0.0;
  for (;;) {
    const double u = 1.0 - rng.next_unit();  // (0, 1]
    t += std::max(1.0, std::ceil(-process.mtbf_steps * std::log(u)));
    if (t > static_cast<double>(steps_total)) break;
    out.push_back({static_cast<std::uint64_t>(t), static_cast<std::uint32_t>(rng.uniform_below(num_ranks))});
  }
  return out;
}

std::vector<FailureEvent> SimConfig::failure_trace() const {
  std::vector<FailureEvent> trace = failures;
  if (random_failures) {
    const auto extra = random_failure_trace(*random_failures, steps_total, num_ranks);
    trace.insert(trace.end(), extra.begin(), extra.end());
  }
  std::stable_sort(trace.begin(), trace.end(),
                   [](const FailureEvent& a, const FailureEvent& b) { return a.step < b.step; });
  return trace;
}

namespace {

// Latest checkpoint, held either in memory or on disk.
class CheckpointStore {
 public:
  explicit CheckpointStore(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  void save(const CheckpointBundle& bundle) {
    if (dir_) {
      save_checkpoint(bundle, *dir_ / "latest.ckpt");
    } else {
      bytes_ = serialize_checkpoint(bundle);
    }
  }

  CheckpointBundle load() const {
    if (dir_) return load_checkpoint(*dir_ / "latest.ckpt");
    return deserialize_checkpoint(bytes_);
  }

 private:
  std::optional<std::filesystem::path> dir_;
  std::vector<std::uint8_t> bytes_;
};

}  // namespace

SimResult run_sim(const SimConfig& cfg, const SessionFactory& factory) {
  cfg.validate();
  const auto trace = cfg.failure_trace();

  SimResult result;
  UptimeReport& rep = result.report;
  rep.recovery_mode = cfg.recovery_mode;

  CheckpointStore store(cfg.checkpoint_dir);
  auto session = factory();
  store.save(session->snapshot());

  MetricsLog log;
  std::size_t next_failure = 0;
  std::uint64_t high_water = 0;

  while (session->current_step() < cfg.steps_total) {
    const MetricsRecord rec = session->step();
    const std::uint64_t s = rec.step;
    log.record_step(rec);
    if (s > high_water) {
      rep.productive_time += cfg.step_wall_time;
      high_water = s;
    } else {
      rep.recomputation_time += cfg.step_wall_time;
    }

    if (next_failure < trace.size() && trace[next_failure].step == s) {
      ++next_failure;
      ++rep.failures_count;
      if (cfg.recovery_mode == RecoveryMode::kNone) {
        rep.completed = false;
        break;
      }
      rep.recovery_time +=
          cfg.recovery_mode == RecoveryMode::kAuto ? cfg.recovery_delay_auto : cfg.recovery_delay_manual;
      session.reset();
      const CheckpointBundle restored = store.load();
      session = factory();
      session->restore(restored);
      log.truncate_after(restored.step);
      continue;
    }

    if (s % cfg.checkpoint_interval == 0) store.save(session->snapshot());
  }

  rep.steps_completed = session ? session->current_step() : 0;
  rep.total_time = rep.productive_time + rep.recomputation_time + rep.recovery_time;
  rep.uptime_fraction =
      rep.total_time == 0 ? 1.0 : static_cast<double>(rep.productive_time) / static_cast<double>(rep.total_time);
  result.metrics = log.records();
  result.final_state = session->snapshot();
  return result;
}

}  // namespace desktrain
