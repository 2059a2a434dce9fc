// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "desktrain/bf16.hpp"
#include "desktrain/rng.hpp"

namespace desktrain::bf16 {
namespace {

// Every non-negative finite bf16 value in increasing order, built from the
// bit patterns through float, independent of the library's rounding code.
const std::vector<double>& positive_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (std::uint32_t b = 0; b < 0x7f80u; ++b) {
      g.push_back(static_cast<double>(std::bit_cast<float>(b << 16)));
    }
    return g;
  }();
  return grid;
}

struct Bracket {
  double down;
  double up;
};

Bracket oracle_bracket(double x) {
  const auto& g = positive_grid();
  const double ax = std::fabs(x);
  auto it = std::lower_bound(g.begin(), g.end(), ax);
  double lo, hi;
  if (*it == ax) {
    lo = hi = ax;
  } else {
    hi = *it;
    lo = *(it - 1);
  }
  if (x < 0) return {-hi, -lo};
  return {lo, hi};
}

double oracle_nearest_even(double x) {
  const auto [down, up] = oracle_bracket(x);
  if (down == up) return down;
  const double dd = x - down, du = up - x;
  if (dd < du) return down;
  if (du < dd) return up;
  const auto down_bits = std::bit_cast<std::uint32_t>(static_cast<float>(down)) >> 16;
  return (down_bits & 1u) == 0 ? down : up;
}

double random_in_range(SplitMix64& g) {
  const int e = static_cast<int>(g.uniform_below(262)) - 134;
  const double m = 1.0 + g.next_unit();
  const double v = std::min(std::ldexp(m, e), kMaxFinite);
  return (g.next() & 1) ? -v : v;
}

TEST(Bf16Test, RepresentableValuesAreFixedPoints) {
  auto rne = RoundingMode::nearest_even();
  EXPECT_EQ(decode(round_bf16(1.0, rne)), 1.0);
  auto sr = RoundingMode::stochastic(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(round_value(1.0, sr), 1.0);
}

TEST(Bf16Test, NeighborsOfOnePlusTwoToMinusNine) {
  const double x = 1.0 + 0x1p-9;
  const auto nb = neighbors(x);
  EXPECT_EQ(nb.down.bits, 0x3f80u);
  EXPECT_EQ(nb.up.bits, 0x3f81u);
  EXPECT_EQ(decode(nb.up), 1.0078125);
  auto rne = RoundingMode::nearest_even();
  EXPECT_EQ(decode(round_bf16(x, rne)), 1.0);
  EXPECT_EQ(oracle_nearest_even(x), 1.0);
}

TEST(Bf16Test, StochasticFrequencyOnePlusTwoToMinusNine) {
  const double x = 1.0 + 0x1p-9;
  auto sr = RoundingMode::stochastic(11);
  constexpr int kTrials = 200000;
  int ups = 0;
  for (int i = 0; i < kTrials; ++i) {
    const double r = round_value(x, sr);
    ASSERT_TRUE(r == 1.0 || r == 1.0078125);
    ups += r == 1.0078125;
  }
  const double p = static_cast<double>(ups) / kTrials;
  const double sigma = std::sqrt(0.25 * 0.75 / kTrials);
  EXPECT_NEAR(p, 0.25, 4 * sigma);
}

TEST(Bf16Test, DecodeEncodeIdentityAndRneIdempotence) {
  auto rne = RoundingMode::nearest_even();
  for (std::uint32_t b = 0; b <= 0xffffu; ++b) {
    const Word w{static_cast<std::uint16_t>(b)};
    if (!w.is_finite()) continue;
    const double v = decode(w);
    ASSERT_EQ(encode_exact(v).bits, w.bits) << b;
    ASSERT_EQ(round_bf16(v, rne).bits, w.bits) << b;
  }
  EXPECT_EQ(rne.saturations(), 0u);
}

TEST(Bf16Test, NeighborsAreAdjacentAndBracket) {
  SplitMix64 g(5);
  for (int i = 0; i < 20000; ++i) {
    const double x = random_in_range(g);
    const auto nb = neighbors(x);
    const double down = decode(nb.down), up = decode(nb.up);
    ASSERT_LE(down, x);
    ASSERT_LE(x, up);
    const auto [od, ou] = oracle_bracket(x);
    ASSERT_EQ(down, od);
    ASSERT_EQ(up, ou);
    if (down != up) {
      // Same sign, adjacent patterns (the zero crossing never occurs since
      // zero is representable).
      ASSERT_EQ(nb.down.bits & 0x8000u, nb.up.bits & 0x8000u);
      const int diff = static_cast<int>(nb.up.bits & 0x7fffu) - static_cast<int>(nb.down.bits & 0x7fffu);
      ASSERT_EQ(std::abs(diff), 1);
    }
  }
}

TEST(Bf16Test, RneMatchesNearestNeighborOracle) {
  SplitMix64 g(17);
  auto rne = RoundingMode::nearest_even();
  for (int i = 0; i < 20000; ++i) {
    const double x = random_in_range(g);
    ASSERT_EQ(round_value(x, rne), oracle_nearest_even(x)) << x;
  }
  // Exact ties go to the even mantissa.
  EXPECT_EQ(round_value(1.0 + 0x1p-8, rne), 1.0);
  EXPECT_EQ(round_value(1.0 + 3 * 0x1p-8, rne), 1.0 + 0x1p-6);
  EXPECT_EQ(round_value(-(1.0 + 0x1p-8), rne), -1.0);
}

TEST(Bf16Test, SubnormalRounding) {
  auto rne = RoundingMode::nearest_even();
  EXPECT_EQ(round_value(0x1p-134, rne), 0.0);  // tie to even zero
  EXPECT_EQ(round_value(3 * 0x1p-134, rne), 0x1p-132);
  EXPECT_EQ(round_value(0x1p-140, rne), 0.0);
  const auto nb = neighbors(1.5 * 0x1p-133);
  EXPECT_EQ(nb.down.bits, 0x0001u);
  EXPECT_EQ(nb.up.bits, 0x0002u);
}

TEST(Bf16Test, StochasticSupportAndUnbiasedness) {
  SplitMix64 g(23);
  auto sr = RoundingMode::stochastic(99);
  constexpr int kTrials = 100000;
  for (int i = 0; i < 10; ++i) {
    const double x = random_in_range(g);
    const auto [down, up] = oracle_bracket(x);
    double sum = 0.0;
    for (int t = 0; t < kTrials; ++t) {
      const double r = round_value(x, sr);
      ASSERT_TRUE(r == down || r == up);
      sum += r - down;
    }
    const double spacing = up - down;
    const double p = spacing == 0 ? 0 : (x - down) / spacing;
    const double se = spacing * std::sqrt(p * (1 - p) / kTrials);
    EXPECT_NEAR(down + sum / kTrials, x, 4 * se + std::fabs(x) * 1e-15) << x;
  }
}

TEST(Bf16Test, EqualSeedsGiveIdenticalDecisions) {
  auto a = RoundingMode::stochastic(1234);
  auto b = RoundingMode::stochastic(1234);
  auto c = RoundingMode::stochastic(1235);
  SplitMix64 g(1);
  int differ = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 1.0 + 0.5 * g.next_unit();
    const double ra = round_value(x, a);
    ASSERT_EQ(ra, round_value(x, b));
    differ += ra != round_value(x, c);
  }
  EXPECT_GT(differ, 0);
}

TEST(Bf16Test, NanThrowsAndOverflowSaturates) {
  auto rne = RoundingMode::nearest_even();
  EXPECT_THROW(round_bf16(std::numeric_limits<double>::quiet_NaN(), rne), std::domain_error);
  EXPECT_EQ(round_value(1e300, rne), kMaxFinite);
  EXPECT_EQ(round_value(-std::numeric_limits<double>::infinity(), rne), -kMaxFinite);
  EXPECT_EQ(rne.saturations(), 2u);
  EXPECT_EQ(round_bf16(1e300, rne).bits, 0x7f7fu);
}

TEST(Bf16Test, StochasticSaturationConsumesOneDraw) {
  auto a = RoundingMode::stochastic(8);
  auto b = RoundingMode::stochastic(8);
  round_value(1e300, a);
  b.stream().draw();
  EXPECT_EQ(a.stream().state(), b.stream().state());
}

TEST(Bf16Test, AccumulateExamples) {
  auto rne = RoundingMode::nearest_even();
  EXPECT_EQ(decode(accumulate({}, 256.0, rne)), 256.0);

  const std::vector<double> addends(1024, 0x1p-10);
  EXPECT_EQ(decode(accumulate(addends, 256.0, rne)), 256.0);

  // Stepwise oracle: the exact sum 256 + 2^-10 is within half an ulp (1.0)
  // of 256, so every step returns 256.
  double acc = 256.0;
  for (double a : addends) acc = oracle_nearest_even(acc + a);
  EXPECT_EQ(acc, 256.0);

  double total = 0.0;
  constexpr int kTrials = 1000;
  for (int t = 0; t < kTrials; ++t) {
    auto sr = RoundingMode::stochastic(mix_seed(77, static_cast<std::uint64_t>(t)));
    total += decode(accumulate(addends, 256.0, sr));
  }
  const double mean = total / kTrials;
  EXPECT_GE(mean, 256.8);
  EXPECT_LE(mean, 257.2);
}

TEST(Bf16Test, QuantizedMatmulExamples) {
  Quantizer rne(NumericMode::kBf16Rne);
  Matrix a(1, 1, 2.0), b(1, 1, 3.0);
  EXPECT_EQ(quantized_matmul(a, b, rne)(0, 0), 6.0);

  Matrix eye(3, 3), x(3, 2);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  SplitMix64 g(4);
  for (double& v : x.data) v = g.normal();
  for (auto mode : {NumericMode::kF32, NumericMode::kBf16Rne, NumericMode::kBf16Sr}) {
    Quantizer q(mode, 21), q_ref(mode, 21);
    const Matrix y = quantized_matmul(eye, x, q);
    for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_EQ(y.data[i], q_ref.apply(x.data[i]));
  }
  Quantizer f32;
  EXPECT_EQ(quantized_matmul(eye, x, f32), x);

  EXPECT_THROW(quantized_matmul(Matrix(2, 3), Matrix(2, 3), rne), std::invalid_argument);
}

TEST(Bf16Test, QuantizedMatmulSrMatchesScalarOracle) {
  Matrix a(1, 2), b(2, 1);
  a.data = {1.0, 0x1p-12};
  b.data = {1.0 + 0x1p-7, 3.0};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Quantizer q(NumericMode::kBf16Sr, seed);
    const double got = quantized_matmul(a, b, q)(0, 0);
    auto oracle = RoundingMode::stochastic(seed);
    const double exact = 1.0 + 0x1p-7 + 3 * 0x1p-12;
    ASSERT_EQ(got, round_value(exact, oracle));
    const auto [down, up] = oracle_bracket(exact);
    ASSERT_TRUE(got == down || got == up);
  }
}

TEST(Bf16Test, VectorApplyMatchesScalarRounding) {
  SplitMix64 g(31);
  std::vector<double> xs;
  for (int i = 0; i < 5000; ++i) xs.push_back(random_in_range(g));
  xs.insert(xs.end(), {0.0, -0.0, 0x1p-130, -0x1p-140, 1e300, -1e300, kMaxFinite, 1.0 + 0x1p-8, 255.9999});
  for (auto mode : {NumericMode::kBf16Rne, NumericMode::kBf16Sr}) {
    Quantizer vec(mode, 5);
    auto scalar = mode == NumericMode::kBf16Sr ? RoundingMode::stochastic(5) : RoundingMode::nearest_even();
    std::vector<double> ys = xs;
    vec.apply(ys);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double expect = round_value(xs[i], scalar);
      ASSERT_EQ(std::bit_cast<std::uint64_t>(ys[i]), std::bit_cast<std::uint64_t>(expect)) << xs[i];
    }
    EXPECT_EQ(vec.stream_state(), scalar.stream().state());
    EXPECT_EQ(vec.rounding().saturations(), scalar.saturations());
  }
}

TEST(Bf16Test, NumericModeNames) {
  for (auto m : {NumericMode::kF32, NumericMode::kBf16Rne, NumericMode::kBf16Sr}) {
    EXPECT_EQ(parse_numeric_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_numeric_mode("fp8"), std::invalid_argument);
}

}  // namespace
}  // namespace desktrain::bf16
