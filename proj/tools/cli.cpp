// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "desktrain/bf16.hpp"
#include "desktrain/checkpoint.hpp"
#include "desktrain/config.hpp"
#include "desktrain/fault_sim.hpp"
#include "desktrain/loader.hpp"
#include "desktrain/monitor.hpp"
#include "desktrain/synthetic.hpp"
#include "desktrain/trainer.hpp"

namespace desktrain::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::shared_ptr<const Corpus> load_corpus(const TrainConfig& cfg) {
  return std::make_shared<const Corpus>(Corpus::from_jsonl(cfg.data.paths));
}

fs::path checkpoint_path(const TrainConfig& cfg, std::uint64_t step) {
  std::ostringstream name;
  name << "step_" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return cfg.output_dir / "checkpoints" / name.str();
}

int run_train(const fs::path& config_path, const std::string& resume, std::uint64_t max_steps, std::ostream& out) {
  const TrainConfig cfg = parse_config(config_path);
  fs::create_directories(cfg.output_dir / "checkpoints");
  {
    std::ofstream eff(cfg.output_dir / "effective_config.json", std::ios::trunc);
    eff << to_json(cfg);
  }

  Trainer trainer(cfg, load_corpus(cfg));
  const fs::path metrics_path = cfg.output_dir / "metrics.jsonl";
  std::vector<MetricsRecord> previous;
  if (!resume.empty()) {
    const CheckpointBundle bundle = load_checkpoint(resume);
    trainer.restore(bundle);
    if (fs::exists(metrics_path)) {
      for (const auto& r : read_metrics(metrics_path)) {
        if (r.step <= bundle.step) previous.push_back(r);
      }
    }
  }
  MetricsLog log(metrics_path);
  for (const auto& r : previous) log.record_step(r);

  const std::uint64_t stop =
      max_steps == 0 ? cfg.optim.total_steps : std::min<std::uint64_t>(cfg.optim.total_steps, max_steps);
  while (trainer.current_step() < stop) {
    const MetricsRecord rec = trainer.step();
    log.record_step(rec);
    if (cfg.checkpoint_interval != 0 && rec.step % cfg.checkpoint_interval == 0) {
      save_checkpoint(trainer.snapshot(), checkpoint_path(cfg, rec.step));
    }
  }
  save_checkpoint(trainer.snapshot(), checkpoint_path(cfg, trainer.current_step()));

  ordered_json summary;
  summary["steps"] = trainer.current_step();
  summary["tokens_per_step"] = cfg.tokens_per_step();
  summary["global_batch"] = cfg.global_batch();
  summary["numeric_mode"] = std::string(bf16::to_string(cfg.numerics.mode));
  summary["final_loss"] = log.records().empty() ? json(nullptr) : json(log.records().back().loss);
  summary["bf16_saturations"] = trainer.saturations();
  summary["metrics"] = metrics_path.string();
  summary["effective_config"] = (cfg.output_dir / "effective_config.json").string();
  out << summary.dump() << '\n';
  return 0;
}

int run_pack(const fs::path& config_path, std::size_t n, std::ostream& out) {
  const TrainConfig cfg = parse_config(config_path);
  auto corpus = load_corpus(cfg);
  auto tokenizer = std::make_shared<const ByteTokenizer>();
  const LoaderOptions opts{cfg.data.max_seq_len, cfg.data.shuffle, cfg.data.max_epochs};
  for (std::uint32_t rank = 0; rank < cfg.data.dp_degree; ++rank) {
    LoaderState state;
    state.seed = cfg.data.seed;
    state.dp_degree = cfg.data.dp_degree;
    state.rank = rank;
    PackingLoader loader(corpus, tokenizer, opts, state);
    for (std::size_t i = 0; i < n; ++i) {
      auto seq = loader.next_sequence();
      if (!seq) break;
      ordered_json line;
      line["rank"] = rank;
      line["index"] = i;
      line["tokens"] = *seq;
      line["boundaries"] = eos_positions(*seq, tokenizer->eos_id());
      out << line.dump() << '\n';
    }
    ordered_json tail;
    tail["rank"] = rank;
    tail["state"] = json::parse(save_state(loader.state()));
    out << tail.dump() << '\n';
  }
  return 0;
}

int run_analyze(const fs::path& metrics_path, const SpikeConfig& spike_cfg, const std::string& csv_path,
                std::ostream& out) {
  const auto records = read_metrics(metrics_path);
  std::vector<double> series;
  series.reserve(records.size());
  for (const auto& r : records) series.push_back(r.grad_norm);
  const SpikeReport report = detect_spikes(series, spike_cfg);
  const SpikeHistogram hist = spike_histogram(report.events);

  ordered_json j;
  j["window"] = spike_cfg.window;
  j["threshold"] = spike_cfg.threshold;
  j["freeze_during_spike"] = spike_cfg.freeze_during_spike;
  j["num_steps"] = records.size();
  j["insufficient_data"] = report.insufficient_data;
  ordered_json events = ordered_json::array();
  for (const auto& e : report.events) {
    events.push_back({{"start_step", records[e.start].step},
                      {"duration", e.duration},
                      {"peak_value", e.peak_value},
                      {"baseline_r", e.baseline_r},
                      {"open", e.open}});
  }
  j["events"] = events;
  ordered_json counts = ordered_json::object();
  for (const auto& [duration, count] : hist.counts) counts[std::to_string(duration)] = count;
  j["histogram"] = counts;
  j["single_step_fraction"] = hist.single_step_fraction ? json(*hist.single_step_fraction) : json(nullptr);
  out << j.dump() << '\n';

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "step,grad_norm,running_avg,in_spike\n";
    std::vector<bool> in_spike(series.size(), false);
    for (const auto& e : report.events) {
      for (std::size_t t = e.start; t < e.start + e.duration && t < series.size(); ++t) in_spike[t] = true;
    }
    csv << std::setprecision(17);
    for (std::size_t t = 0; t < series.size(); ++t) {
      csv << records[t].step << ',' << series[t] << ',';
      if (t >= spike_cfg.window) {
        double sum = 0.0;
        for (std::size_t i = t - spike_cfg.window; i < t; ++i) sum += series[i];
        csv << sum / static_cast<double>(spike_cfg.window);
      }
      csv << ',' << (in_spike[t] ? 1 : 0) << '\n';
    }
  }
  return 0;
}

ordered_json report_json(const UptimeReport& r) {
  ordered_json j;
  j["recovery_mode"] = std::string(to_string(r.recovery_mode));
  j["productive_time"] = r.productive_time;
  j["recomputation_time"] = r.recomputation_time;
  j["recovery_time"] = r.recovery_time;
  j["total_time"] = r.total_time;
  j["uptime_fraction"] = r.uptime_fraction;
  j["failures_count"] = r.failures_count;
  j["steps_completed"] = r.steps_completed;
  j["completed"] = r.completed;
  return j;
}

int run_simulate(const fs::path& config_path, bool dry, bool compare, std::ostream& out) {
  const TrainConfig cfg = parse_config(config_path);
  if (!cfg.simulation) throw UsageError("config has no \"simulation\" section");
  std::shared_ptr<const Corpus> corpus;
  if (!dry) corpus = load_corpus(cfg);
  const SessionFactory factory = [&]() -> std::unique_ptr<TrainSession> {
    if (dry) return std::make_unique<ClockOnlySession>();
    return std::make_unique<Trainer>(cfg, corpus);
  };

  if (!compare) {
    out << report_json(run_sim(*cfg.simulation, factory).report).dump() << '\n';
    return 0;
  }
  SimConfig with_auto = *cfg.simulation;
  with_auto.recovery_mode = RecoveryMode::kAuto;
  SimConfig manual = *cfg.simulation;
  manual.recovery_mode = RecoveryMode::kManual;
  ordered_json j;
  j["auto"] = report_json(run_sim(with_auto, factory).report);
  j["manual"] = report_json(run_sim(manual, factory).report);
  out << j.dump() << '\n';
  return 0;
}

int run_synth(const std::string& path, const std::string& kind, std::size_t docs, std::uint64_t seed,
              std::ostream& out) {
  std::vector<std::string> corpus;
  if (kind == "structured") {
    corpus = structured_corpus(docs, seed);
  } else if (kind == "random") {
    corpus = random_corpus(docs, 1, 400, seed);
  } else {
    throw UsageError("--kind must be structured or random");
  }
  write_jsonl(path, corpus);
  out << ordered_json{{"path", path}, {"documents", corpus.size()}}.dump() << '\n';
  return 0;
}

void print_error(std::ostream& err, const std::string& subcommand, const std::string& message) {
  ordered_json j;
  j["error"] = message;
  if (!subcommand.empty()) j["subcommand"] = subcommand;
  err << j.dump() << '\n';
}

}  // namespace

std::string sr_bench_json(const SrBenchOptions& opts) {
  SplitMix64 gen(opts.seed);
  auto random_value = [&gen]() {
    // Log-uniform magnitude over normal and subnormal exponents, random sign.
    const double e = -130.0 + 257.0 * gen.next_unit();
    const double v = std::ldexp(1.0 + gen.next_unit(), static_cast<int>(std::floor(e)));
    const double clamped = std::min(v, bf16::kMaxFinite);
    return (gen.next() & 1) ? -clamped : clamped;
  };

  ordered_json unbiased = ordered_json::array();
  double max_abs_z = 0.0;
  auto sr = bf16::RoundingMode::stochastic(mix_seed(opts.seed, 1));
  for (std::size_t i = 0; i < opts.values; ++i) {
    const double x = random_value();
    const auto nb = bf16::neighbors(x);
    const double down = bf16::decode(nb.down), up = bf16::decode(nb.up);
    double sum = 0.0;
    for (std::size_t t = 0; t < opts.trials; ++t) sum += bf16::round_value(x, sr) - down;
    const double spacing = up - down;
    const double mean = down + sum / static_cast<double>(opts.trials);
    const double p = spacing == 0.0 ? 0.0 : (x - down) / spacing;
    const double sigma = spacing * std::sqrt(p * (1.0 - p));
    const double se = sigma / std::sqrt(static_cast<double>(opts.trials));
    const double z = se == 0.0 ? (mean == x ? 0.0 : INFINITY) : (mean - x) / se;
    max_abs_z = std::max(max_abs_z, std::fabs(z));
    unbiased.push_back({{"x", x}, {"mean", mean}, {"p_up", p}, {"z", z}});
  }

  std::size_t rne_mismatches = 0;
  auto rne = bf16::RoundingMode::nearest_even();
  for (std::size_t i = 0; i < opts.rne_checks; ++i) {
    const double x = random_value();
    const auto nb = bf16::neighbors(x);
    const double down = bf16::decode(nb.down), up = bf16::decode(nb.up);
    const double got = bf16::round_value(x, rne);
    const double dd = x - down, du = up - x;
    const double expect = dd < du ? down : du < dd ? up : ((nb.down.bits & 1u) == 0 ? down : up);
    if (got != expect) ++rne_mismatches;
  }

  const std::vector<double> addends(1024, 0x1p-10);
  auto rne_acc = bf16::RoundingMode::nearest_even();
  const double rne_result = bf16::decode(bf16::accumulate(addends, 256.0, rne_acc));
  double acc_sum = 0.0, acc_sq = 0.0;
  for (std::size_t t = 0; t < opts.accumulate_trials; ++t) {
    auto mode = bf16::RoundingMode::stochastic(mix_seed(opts.seed, 1000 + t));
    const double v = bf16::decode(bf16::accumulate(addends, 256.0, mode));
    acc_sum += v;
    acc_sq += v * v;
  }
  const auto n = static_cast<double>(opts.accumulate_trials);
  const double acc_mean = acc_sum / n;
  const double acc_std = std::sqrt(std::max(0.0, acc_sq / n - acc_mean * acc_mean));

  ordered_json j;
  j["seed"] = opts.seed;
  j["unbiasedness"] = {{"values", opts.values},
                       {"trials", opts.trials},
                       {"max_abs_z", max_abs_z},
                       {"within_4_sigma", max_abs_z <= 4.0},
                       {"samples", unbiased}};
  j["nearest_even"] = {{"checks", opts.rne_checks}, {"mismatches", rne_mismatches}};
  j["accumulation"] = {{"init", 256.0},
                       {"addend", 0x1p-10},
                       {"count", addends.size()},
                       {"exact_sum", 257.0},
                       {"rne_result", rne_result},
                       {"sr_trials", opts.accumulate_trials},
                       {"sr_mean", acc_mean},
                       {"sr_std", acc_std}};
  return j.dump();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"desktrain: desk-scale LLM pre-training toolkit", "desktrain"};
  app.require_subcommand(1);

  std::string config;
  std::string resume;
  std::uint64_t max_steps = 0;
  auto* train = app.add_subcommand("train", "Train a model; writes metrics.jsonl, checkpoints and effective_config.json");
  train->add_option("--config", config, "Config file (JSON)")->required();
  train->add_option("--resume", resume, "Resume from a checkpoint file");
  train->add_option("--max-steps", max_steps, "Stop after this many steps (schedule unchanged)");

  std::size_t pack_n = 4;
  auto* pack = app.add_subcommand("pack", "Print packed sequences with EOS boundaries as JSON lines");
  pack->add_option("--config", config, "Config file (JSON)")->required();
  pack->add_option("--n", pack_n, "Sequences per rank")->check(CLI::PositiveNumber);

  std::string metrics_path, csv_path;
  SpikeConfig spike_cfg;
  auto* analyze = app.add_subcommand("analyze-spikes", "Gradient-spike events and duration histogram of a metrics log");
  analyze->add_option("--metrics", metrics_path, "metrics.jsonl written by train")->required();
  analyze->add_option("--window", spike_cfg.window, "Running-average window")->check(CLI::PositiveNumber);
  analyze->add_option("--threshold", spike_cfg.threshold, "Absolute threshold above the running average");
  analyze->add_flag("--freeze", spike_cfg.freeze_during_spike, "Freeze the running average during a spike");
  analyze->add_option("--csv", csv_path, "Also write per-step plot data");

  SrBenchOptions bench;
  auto* sr_bench = app.add_subcommand("sr-bench", "Stochastic-rounding unbiasedness and accumulation statistics");
  sr_bench->add_option("--values", bench.values, "Random values for the unbiasedness check");
  sr_bench->add_option("--trials", bench.trials, "Rounding trials per value");
  sr_bench->add_option("--rne-checks", bench.rne_checks, "Values checked against the nearest-neighbor oracle");
  sr_bench->add_option("--accumulate-trials", bench.accumulate_trials, "Seeded trials of 256 + 1024 * 2^-10");
  sr_bench->add_option("--seed", bench.seed, "Seed");

  bool dry = false, compare = false;
  auto* simulate = app.add_subcommand("simulate", "Fault-injection simulation; prints the uptime report");
  simulate->add_option("--config", config, "Config file with a \"simulation\" section")->required();
  simulate->add_flag("--dry", dry, "Account time only, without running the model");
  simulate->add_flag("--compare", compare, "Report auto and manual recovery on the same failure trace");

  std::string synth_out, synth_kind = "structured";
  std::size_t synth_docs = 2000;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic JSONL corpus");
  synth->add_option("--out", synth_out, "Output path")->required();
  synth->add_option("--kind", synth_kind, "structured or random");
  synth->add_option("--docs", synth_docs, "Number of documents");
  synth->add_option("--seed", synth_seed, "Seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "", e.what());
    err << app.help();
    return 2;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    if (chosen == train) return run_train(config, resume, max_steps, out);
    if (chosen == pack) return run_pack(config, pack_n, out);
    if (chosen == analyze) return run_analyze(metrics_path, spike_cfg, csv_path, out);
    if (chosen == sr_bench) {
      out << sr_bench_json(bench) << '\n';
      return 0;
    }
    if (chosen == simulate) return run_simulate(config, dry, compare, out);
    if (chosen == synth) return run_synth(synth_out, synth_kind, synth_docs, synth_seed, out);
  } catch (const UsageError& e) {
    print_error(err, name, e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(err, name, e.what());
    return 1;
  }
  return 2;
}

}  // namespace desktrain::cli
