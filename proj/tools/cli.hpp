// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace desktrain::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on a usage
/// error. Failures also print one JSON line {"error": ...} to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct SrBenchOptions {
  std::size_t values = 50;
  std::size_t trials = 100000;
  std::size_t rne_checks = 10000;
  std::size_t accumulate_trials = 1000;
  std::uint64_t seed = 7;
};

/// Unbiasedness and accumulation statistics for stochastic rounding, as JSON.
std::string sr_bench_json(const SrBenchOptions& opts);

}  // namespace desktrain::cli
