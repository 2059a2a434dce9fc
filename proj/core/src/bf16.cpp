// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/bf16.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace desktrain::bf16 {
namespace {

// A bf16 normal keeps the top 7 of the 52 double mantissa bits.
constexpr int kDroppedBits = 45;
constexpr std::uint64_t kDroppedMask = (std::uint64_t{1} << kDroppedBits) - 1;
constexpr std::uint64_t kHalfUlp = std::uint64_t{1} << (kDroppedBits - 1);
constexpr std::uint64_t kUlp = std::uint64_t{1} << kDroppedBits;

struct Magnitudes {
  double lo;
  double hi;
};

// Bracketing magnitudes for 0 <= ax <= kMaxFinite.
Magnitudes bracket(double ax) {
  if (ax < kMinNormal) {
    const double scaled = ax / kSubnormalSpacing;
    const double k = std::floor(scaled);
    const double lo = k * kSubnormalSpacing;
    return {lo, lo == ax ? lo : lo + kSubnormalSpacing};
  }
  const auto bits = std::bit_cast<std::uint64_t>(ax);
  const std::uint64_t lo_bits = bits & ~kDroppedMask;
  const double lo = std::bit_cast<double>(lo_bits);
  return {lo, (bits & kDroppedMask) == 0 ? lo : std::bit_cast<double>(lo_bits + kUlp)};
}

double round_magnitude(double ax, RoundingMode& mode) {
  const bool stochastic = mode.kind() == RoundingKind::kStochastic;
  const std::uint32_t u = stochastic ? mode.stream().draw() : 0;

  if (ax < kMinNormal) {
    const double scaled = ax / kSubnormalSpacing;
    const double k = std::floor(scaled);
    const double frac = scaled - k;
    bool up;
    if (stochastic) {
      up = static_cast<double>(u) < frac * 0x1p32;
    } else {
      up = frac > 0.5 || (frac == 0.5 && std::fmod(k, 2.0) != 0.0);
    }
    return (up ? k + 1.0 : k) * kSubnormalSpacing;
  }

  const auto bits = std::bit_cast<std::uint64_t>(ax);
  const std::uint64_t rem = bits & kDroppedMask;
  const std::uint64_t lo_bits = bits & ~kDroppedMask;
  bool up;
  if (stochastic) {
    // P(up) = rem / 2^45, drawn as u / 2^32 < rem / 2^45.
    up = (static_cast<std::uint64_t>(u) << (kDroppedBits - 32)) < rem;
  } else {
    up = rem > kHalfUlp || (rem == kHalfUlp && ((lo_bits >> kDroppedBits) & 1u) != 0);
  }
  return std::bit_cast<double>(up ? lo_bits + kUlp : lo_bits);
}

}  // namespace

double decode(Word w) noexcept {
  return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(w.bits) << 16));
}

Word encode_exact(double v) {
  const auto f = static_cast<float>(v);
  const auto fbits = std::bit_cast<std::uint32_t>(f);
  if ((fbits & 0xffffu) != 0 || (static_cast<double>(f) != v && !std::isnan(v))) {
    throw std::invalid_argument("bf16::encode_exact: value not representable: " + std::to_string(v));
  }
  return Word{static_cast<std::uint16_t>(fbits >> 16)};
}

Neighbors neighbors(double x) {
  if (!std::isfinite(x) || std::fabs(x) > kMaxFinite) {
    throw std::domain_error("bf16::neighbors: input outside the finite bf16 range");
  }
  const auto [lo, hi] = bracket(std::fabs(x));
  if (std::signbit(x)) return {encode_exact(-hi), encode_exact(-lo)};
  return {encode_exact(lo), encode_exact(hi)};
}

double round_value(double x, RoundingMode& mode) {
  if (std::isnan(x)) throw std::domain_error("bf16::round: NaN input");
  const double ax = std::fabs(x);
  if (ax > kMaxFinite) {
    mode.note_saturation();
    if (mode.kind() == RoundingKind::kStochastic) mode.stream().draw();
    return std::copysign(kMaxFinite, x);
  }
  return std::copysign(round_magnitude(ax, mode), x);
}

Word round_bf16(double x, RoundingMode& mode) { return encode_exact(round_value(x, mode)); }

Word accumulate(std::span<const double> addends, double init, RoundingMode& mode) {
  double acc = round_value(init, mode);
  for (double a : addends) acc = round_value(acc + a, mode);
  return encode_exact(acc);
}

std::string_view to_string(NumericMode mode) noexcept {
  switch (mode) {
    case NumericMode::kF32: return "f32";
    case NumericMode::kBf16Rne: return "bf16-rne";
    case NumericMode::kBf16Sr: return "bf16-sr";
  }
  return "unknown";
}

NumericMode parse_numeric_mode(std::string_view text) {
  if (text == "f32") return NumericMode::kF32;
  if (text == "bf16-rne") return NumericMode::kBf16Rne;
  if (text == "bf16-sr") return NumericMode::kBf16Sr;
  throw std::invalid_argument("unknown numeric mode '" + std::string(text) +
                              "' (expected f32, bf16-rne or bf16-sr)");
}

Quantizer::Quantizer(NumericMode mode, std::uint64_t sr_seed) noexcept
    : mode_(mode),
      rounding_(mode == NumericMode::kBf16Sr ? RoundingMode::stochastic(sr_seed)
                                             : RoundingMode::nearest_even()) {}

void Quantizer::apply(std::span<double> xs) {
  if (!active()) return;
  // Same arithmetic as round_value with the normal-range case inlined; the
  // stream advances exactly once per element either way.
  const bool stochastic = rounding_.kind() == RoundingKind::kStochastic;
  constexpr std::uint64_t kSign = std::uint64_t{1} << 63;
  const auto min_normal_bits = std::bit_cast<std::uint64_t>(kMinNormal);
  const auto max_finite_bits = std::bit_cast<std::uint64_t>(kMaxFinite);
  for (double& x : xs) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    const std::uint64_t mag = bits & ~kSign;
    if (mag == 0) {
      if (stochastic) rounding_.stream().draw();
      continue;
    }
    if (mag < min_normal_bits || mag > max_finite_bits) {
      x = round_value(x, rounding_);
      continue;
    }
    // Adding one ulp to the sign-magnitude bits moves away from zero; a
    // carry into the exponent lands on the next binade, as it should.
    if (stochastic) {
      const std::uint64_t rem = bits & kDroppedMask;
      const bool up = (static_cast<std::uint64_t>(rounding_.stream().draw()) << (kDroppedBits - 32)) < rem;
      x = std::bit_cast<double>((bits & ~kDroppedMask) + (static_cast<std::uint64_t>(up) << kDroppedBits));
    } else {
      const std::uint64_t lsb = (bits >> kDroppedBits) & 1u;
      x = std::bit_cast<double>((bits + kHalfUlp - 1 + lsb) & ~kDroppedMask);
    }
  }
}

Matrix quantized_matmul(const Matrix& a, const Matrix& b, Quantizer& quantizer) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("quantized_matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + ")");
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  quantizer.apply(out.data);
  return out;
}

}  // namespace desktrain::bf16
