// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/monitor.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace desktrain {

using nlohmann::json;

std::string to_json_line(const MetricsRecord& r) {
  json j;
  j["step"] = r.step;
  j["tokens_seen"] = r.tokens_seen;
  j["loss"] = r.loss;
  j["grad_norm"] = r.grad_norm;
  j["param_norm"] = r.param_norm;
  j["lr"] = r.lr;
  return j.dump();
}

MetricsRecord parse_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("metrics record: ") + e.what());
  }
  auto need = [&](const char* key) -> const json& {
    if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("metrics record: missing ") + key);
    return j.at(key);
  };
  MetricsRecord r;
  try {
    r.step = need("step").get<std::uint64_t>();
    r.tokens_seen = need("tokens_seen").get<std::uint64_t>();
    r.loss = need("loss").get<double>();
    r.grad_norm = need("grad_norm").get<double>();
    r.param_norm = need("param_norm").get<double>();
    r.lr = need("lr").get<double>();
  } catch (const json::type_error& e) {
    throw std::invalid_argument(std::string("metrics record: ") + e.what());
  }
  return r;
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
}

void MetricsLog::record_step(const MetricsRecord& record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    throw std::invalid_argument("metrics log: step " + std::to_string(record.step) +
                                " does not follow step " + std::to_string(records_.back().step));
  }
  if (!(record.grad_norm >= 0.0) || !(record.param_norm >= 0.0)) {
    throw std::invalid_argument("metrics log: norms must be non-negative");
  }
  records_.push_back(record);
  if (path_) {
    out_ << to_json_line(record) << '\n';
    out_.flush();
  }
}

void MetricsLog::truncate_after(std::uint64_t step) {
  std::size_t keep = records_.size();
  while (keep > 0 && records_[keep - 1].step > step) --keep;
  if (keep == records_.size()) return;
  records_.resize(keep);
  if (path_) rewrite_file();
}

void MetricsLog::rewrite_file() {
  out_.close();
  out_.open(*path_, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot rewrite metrics log " + path_->string());
  for (const auto& r : records_) out_ << to_json_line(r) << '\n';
  out_.flush();
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics log " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

double global_l2(const TensorSet& tensors) {
  double sum = 0.0;
  for (const auto& t : tensors) {
    for (double v : t.data) sum += v * v;
  }
  return std::sqrt(sum);
}

double global_l2(std::span<const std::span<const double>> tensors) {
  double sum = 0.0;
  for (const auto& t : tensors) {
    for (double v : t) sum += v * v;
  }
  return std::sqrt(sum);
}

SpikeReport detect_spikes(std::span<const double> series, const SpikeConfig& cfg) {
  SpikeReport report;
  const std::size_t w = cfg.window;
  if (w == 0) throw std::invalid_argument("detect_spikes: window must be positive");
  if (series.size() <= w) {
    report.insufficient_data = true;
    return report;
  }
  const auto wd = static_cast<double>(w);
  // Comparing w * value - window_sum against w * threshold keeps the test
  // exact under a constant shift whenever the values are exact.
  const double scaled_threshold = wd * cfg.threshold;
  std::optional<SpikeEvent> active;
  double frozen_sum = 0.0;
  for (std::size_t t = w; t < series.size(); ++t) {
    double window_sum = 0.0;
    for (std::size_t i = t - w; i < t; ++i) window_sum += series[i];
    const double v = series[t];
    const double ref_sum = (active && cfg.freeze_during_spike) ? frozen_sum : window_sum;
    const double excess = wd * v - ref_sum;
    if (!active) {
      if (excess > scaled_threshold) {
        active = SpikeEvent{t, 0, v, window_sum / wd, false};
        frozen_sum = window_sum;
      }
    } else if (excess < scaled_threshold) {
      active->duration = t - active->start;
      report.events.push_back(*active);
      active.reset();
    } else {
      active->peak_value = std::max(active->peak_value, v);
    }
  }
  if (active) {
    active->duration = series.size() - active->start;
    active->open = true;
    report.events.push_back(*active);
  }
  return report;
}

SpikeHistogram spike_histogram(std::span<const SpikeEvent> events) {
  SpikeHistogram h;
  for (const auto& e : events) ++h.counts[e.duration];
  if (!events.empty()) {
    const auto it = h.counts.find(1);
    const std::size_t ones = it == h.counts.end() ? 0 : it->second;
    h.single_step_fraction = static_cast<double>(ones) / static_cast<double>(events.size());
  }
  return h;
}

}  // namespace desktrain
