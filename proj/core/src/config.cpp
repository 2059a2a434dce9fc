// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace desktrain {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

// Reads optional keys of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void unsigned_int(const char* key, T& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(field(key), "must be a non-negative integer");
      const auto raw = v->get<std::uint64_t>();
      if (raw > std::numeric_limits<T>::max()) fail(field(key), "out of range");
      out = static_cast<T>(raw);
    }
  }

  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(field(key), "must be a number");
      out = v->get<double>();
    }
  }

  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(field(key), "must be true or false");
      out = v->get<bool>();
    }
  }

  void string(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(field(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) fail(path_.empty() ? key : path_ + "." + key, "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return std::filesystem::absolute(path).lexically_normal();
}

void parse_model(const json& j, TrainConfig& cfg) {
  Section s(j, "model");
  auto& m = cfg.model;
  s.unsigned_int("vocab_size", m.vocab_size);
  s.unsigned_int("model_dim", m.model_dim);
  s.unsigned_int("num_layers", m.num_layers);
  s.unsigned_int("num_heads", m.num_heads);
  s.unsigned_int("ffn_hidden", m.ffn_hidden);
  s.unsigned_int("max_seq_len", m.max_seq_len);
  s.real("rope_theta", m.rope_theta);
  s.real("rmsnorm_eps", m.rmsnorm_eps);
  s.real("init_std", m.init_std);
  s.unsigned_int("init_seed", cfg.init_seed);
  s.finish();
}

void parse_optim(const json& j, OptimConfig& o) {
  Section s(j, "optim");
  s.real("lr_max", o.lr_max);
  s.real("lr_min", o.lr_min);
  s.unsigned_int("warmup_steps", o.warmup_steps);
  s.unsigned_int("total_steps", o.total_steps);
  s.real("beta1", o.beta1);
  s.real("beta2", o.beta2);
  s.real("weight_decay", o.weight_decay);
  s.real("clip_norm", o.clip_norm);
  s.real("adam_eps", o.adam_eps);
  s.boolean("decay_norm_weights", o.decay_norm_weights);
  s.finish();
}

void parse_data(const json& j, DataConfig& d, const std::filesystem::path& base) {
  Section s(j, "data");
  if (const json* paths = s.find("paths")) {
    if (!paths->is_array()) fail("data.paths", "must be an array of strings");
    d.paths.clear();
    for (const auto& p : *paths) {
      if (!p.is_string()) fail("data.paths", "must be an array of strings");
      d.paths.push_back(resolve(base, p.get<std::string>()));
    }
  }
  s.unsigned_int("seed", d.seed);
  s.unsigned_int("dp_degree", d.dp_degree);
  s.unsigned_int("max_seq_len", d.max_seq_len);
  s.unsigned_int("batch_size_per_rank", d.batch_size_per_rank);
  s.unsigned_int("prefetch_depth", d.prefetch_depth);
  s.boolean("shuffle", d.shuffle);
  s.unsigned_int("max_epochs", d.max_epochs);
  s.finish();
}

void parse_numerics(const json& j, NumericsConfig& n) {
  Section s(j, "numerics");
  std::string mode(bf16::to_string(n.mode));
  s.string("mode", mode);
  try {
    n.mode = bf16::parse_numeric_mode(mode);
  } catch (const std::invalid_argument& e) {
    fail("numerics.mode", e.what());
  }
  s.unsigned_int("sr_seed", n.sr_seed);
  s.finish();
}

void parse_monitor(const json& j, SpikeConfig& m) {
  Section s(j, "monitor");
  s.unsigned_int("window", m.window);
  s.real("threshold", m.threshold);
  s.boolean("freeze_during_spike", m.freeze_during_spike);
  s.finish();
}

SimConfig parse_simulation(const json& j, const std::filesystem::path& base) {
  Section s(j, "simulation");
  SimConfig c;
  s.unsigned_int("num_ranks", c.num_ranks);
  s.unsigned_int("steps_total", c.steps_total);
  s.unsigned_int("step_wall_time", c.step_wall_time);
  s.unsigned_int("checkpoint_interval", c.checkpoint_interval);
  s.unsigned_int("recovery_delay_auto", c.recovery_delay_auto);
  s.unsigned_int("recovery_delay_manual", c.recovery_delay_manual);
  if (const json* fs = s.find("failures")) {
    if (!fs->is_array()) fail("simulation.failures", "must be an array");
    for (std::size_t i = 0; i < fs->size(); ++i) {
      Section f((*fs)[i], "simulation.failures[" + std::to_string(i) + "]");
      FailureEvent e;
      f.unsigned_int("step", e.step);
      f.unsigned_int("rank", e.rank);
      f.finish();
      c.failures.push_back(e);
    }
  }
  if (const json* rf = s.find("random_failures")) {
    Section r(*rf, "simulation.random_failures");
    RandomFailures process;
    r.real("mtbf_steps", process.mtbf_steps);
    r.unsigned_int("seed", process.seed);
    r.finish();
    c.random_failures = process;
  }
  std::string mode(to_string(c.recovery_mode));
  s.string("recovery_mode", mode);
  try {
    c.recovery_mode = parse_recovery_mode(mode);
  } catch (const std::invalid_argument& e) {
    fail("simulation.recovery_mode", e.what());
  }
  std::string dir;
  s.string("checkpoint_dir", dir);
  if (!dir.empty()) c.checkpoint_dir = resolve(base, dir);
  s.finish();
  return c;
}

}  // namespace

void validate(const TrainConfig& cfg, bool check_paths) {
  const auto& m = cfg.model;
  if (m.vocab_size < 257) fail("model.vocab_size", "must be >= 257 for the byte tokenizer");
  if (m.model_dim == 0) fail("model.model_dim", "must be >= 1");
  if (m.num_layers == 0) fail("model.num_layers", "must be >= 1");
  if (m.num_heads == 0) fail("model.num_heads", "must be >= 1");
  if (m.model_dim % m.num_heads != 0) fail("model.num_heads", "must divide model.model_dim");
  if (m.head_dim() % 2 != 0) fail("model.num_heads", "head_dim = model_dim / num_heads must be even");
  if (m.max_seq_len == 0) fail("model.max_seq_len", "must be >= 1");
  if (!(m.rope_theta > 0.0)) fail("model.rope_theta", "must be positive");
  if (!(m.rmsnorm_eps > 0.0)) fail("model.rmsnorm_eps", "must be positive");
  if (!(m.init_std > 0.0)) fail("model.init_std", "must be positive");

  const auto& o = cfg.optim;
  if (!(o.lr_max > 0.0)) fail("optim.lr_max", "must be positive");
  if (!(o.lr_min > 0.0)) fail("optim.lr_min", "must be positive");
  if (o.lr_min > o.lr_max) fail("optim.lr_min", "must not exceed optim.lr_max");
  if (o.warmup_steps >= o.total_steps) fail("optim.warmup_steps", "must be smaller than optim.total_steps");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) fail("optim.beta1", "must lie in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) fail("optim.beta2", "must lie in [0, 1)");
  if (!(o.weight_decay >= 0.0)) fail("optim.weight_decay", "must be non-negative");
  if (!(o.clip_norm > 0.0)) fail("optim.clip_norm", "must be positive");
  if (!(o.adam_eps > 0.0)) fail("optim.adam_eps", "must be positive");

  const auto& d = cfg.data;
  if (check_paths) {
    if (d.paths.empty()) fail("data.paths", "at least one dataset file is required");
    for (const auto& p : d.paths) {
      if (!std::filesystem::exists(p)) fail("data.paths", "file not found: " + p.string());
    }
  }
  if (d.dp_degree == 0) fail("data.dp_degree", "must be >= 1");
  if (d.max_seq_len < 2) fail("data.max_seq_len", "must be >= 2");
  if (d.max_seq_len - 1 > m.max_seq_len) fail("data.max_seq_len", "rows minus one must fit model.max_seq_len");
  if (d.batch_size_per_rank == 0) fail("data.batch_size_per_rank", "must be >= 1");

  if (cfg.monitor.window == 0) fail("monitor.window", "must be >= 1");
  if (!(cfg.monitor.threshold >= 0.0)) fail("monitor.threshold", "must be non-negative");

  if (cfg.simulation) {
    try {
      cfg.simulation->validate();
    } catch (const std::invalid_argument& e) {
      fail("simulation", e.what());
    }
  }
}

TrainConfig parse_config_json(std::string_view text, const std::filesystem::path& base_dir, bool check_paths) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  TrainConfig cfg;
  cfg.output_dir = resolve(base_dir, "run");
  Section top(root, "");
  if (const json* j = top.find("model")) parse_model(*j, cfg);
  if (cfg.model.ffn_hidden == 0 && cfg.model.model_dim != 0) {
    cfg.model.ffn_hidden = ModelConfig::default_ffn_hidden(cfg.model.model_dim);
  }
  if (const json* j = top.find("optim")) parse_optim(*j, cfg.optim);
  if (const json* j = top.find("data")) parse_data(*j, cfg.data, base_dir);
  if (const json* j = top.find("numerics")) parse_numerics(*j, cfg.numerics);
  if (const json* j = top.find("monitor")) parse_monitor(*j, cfg.monitor);
  if (const json* j = top.find("checkpoint")) {
    Section s(*j, "checkpoint");
    s.unsigned_int("interval", cfg.checkpoint_interval);
    s.finish();
  }
  std::string out;
  top.string("output_dir", out);
  if (!out.empty()) cfg.output_dir = resolve(base_dir, out);
  if (const json* j = top.find("simulation")) cfg.simulation = parse_simulation(*j, base_dir);
  top.finish();
  validate(cfg, check_paths);
  return cfg;
}

TrainConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string to_json(const TrainConfig& cfg) {
  ordered_json j;
  const auto& m = cfg.model;
  j["model"] = {{"vocab_size", m.vocab_size},   {"model_dim", m.model_dim},     {"num_layers", m.num_layers},
                {"num_heads", m.num_heads},     {"ffn_hidden", m.resolved_ffn_hidden()},
                {"max_seq_len", m.max_seq_len}, {"rope_theta", m.rope_theta},   {"rmsnorm_eps", m.rmsnorm_eps},
                {"init_std", m.init_std},       {"init_seed", cfg.init_seed}};
  const auto& o = cfg.optim;
  j["optim"] = {{"lr_max", o.lr_max},           {"lr_min", o.lr_min},           {"warmup_steps", o.warmup_steps},
                {"total_steps", o.total_steps}, {"beta1", o.beta1},             {"beta2", o.beta2},
                {"weight_decay", o.weight_decay}, {"clip_norm", o.clip_norm},   {"adam_eps", o.adam_eps},
                {"decay_norm_weights", o.decay_norm_weights}};
  const auto& d = cfg.data;
  ordered_json paths = ordered_json::array();
  for (const auto& p : d.paths) paths.push_back(p.string());
  j["data"] = {{"paths", paths},
               {"seed", d.seed},
               {"dp_degree", d.dp_degree},
               {"max_seq_len", d.max_seq_len},
               {"batch_size_per_rank", d.batch_size_per_rank},
               {"prefetch_depth", d.prefetch_depth},
               {"shuffle", d.shuffle},
               {"max_epochs", d.max_epochs}};
  j["numerics"] = {{"mode", std::string(bf16::to_string(cfg.numerics.mode))}, {"sr_seed", cfg.numerics.sr_seed}};
  j["monitor"] = {{"window", cfg.monitor.window},
                  {"threshold", cfg.monitor.threshold},
                  {"freeze_during_spike", cfg.monitor.freeze_during_spike}};
  j["checkpoint"] = {{"interval", cfg.checkpoint_interval}};
  j["output_dir"] = cfg.output_dir.string();
  if (cfg.simulation) {
    const auto& s = *cfg.simulation;
    ordered_json fails = ordered_json::array();
    for (const auto& f : s.failures) fails.push_back({{"step", f.step}, {"rank", f.rank}});
    ordered_json sim = {{"num_ranks", s.num_ranks},
                        {"steps_total", s.steps_total},
                        {"step_wall_time", s.step_wall_time},
                        {"checkpoint_interval", s.checkpoint_interval},
                        {"recovery_delay_auto", s.recovery_delay_auto},
                        {"recovery_delay_manual", s.recovery_delay_manual},
                        {"failures", fails},
                        {"recovery_mode", std::string(to_string(s.recovery_mode))}};
    if (s.random_failures) {
      sim["random_failures"] = {{"mtbf_steps", s.random_failures->mtbf_steps}, {"seed", s.random_failures->seed}};
    }
    if (s.checkpoint_dir) sim["checkpoint_dir"] = s.checkpoint_dir->string();
    j["simulation"] = sim;
  }
  return j.dump(2) + "\n";
}

}  // namespace desktrain
