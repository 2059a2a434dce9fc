// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

// Software-emulated bfloat16 with round-to-nearest-even and stochastic
// rounding. Values are carried in double precision between operations; a
// value is "bf16" when it is exactly representable as a Word.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "desktrain/rng.hpp"

namespace desktrain::bf16 {

/// Largest finite bfloat16 magnitude, (2 - 2^-7) * 2^127.
inline constexpr double kMaxFinite = 0x1.fep127;
/// Smallest positive normal bfloat16.
inline constexpr double kMinNormal = 0x1p-126;
/// Spacing of subnormal bfloat16 values.
inline constexpr double kSubnormalSpacing = 0x1p-133;

/// A 16-bit bfloat16 pattern: 1 sign, 8 exponent, 7 mantissa bits.
struct Word {
  std::uint16_t bits = 0;

  static constexpr Word from_bits(std::uint16_t b) noexcept { return Word{b}; }

  bool is_nan() const noexcept { return (bits & 0x7f80u) == 0x7f80u && (bits & 0x007fu) != 0; }
  bool is_inf() const noexcept { return (bits & 0x7fffu) == 0x7f80u; }
  bool is_finite() const noexcept { return (bits & 0x7f80u) != 0x7f80u; }

  friend constexpr bool operator==(Word, Word) noexcept = default;
};

/// Exact value of a word as a double.
double decode(Word w) noexcept;

/// Encodes a double that is exactly representable in bfloat16.
/// Throws std::invalid_argument otherwise.
Word encode_exact(double v);

/// The two representable values bracketing x: down <= x <= up. They are
/// equal when x is representable. x must be finite and |x| <= kMaxFinite.
struct Neighbors {
  Word down;
  Word up;
};
Neighbors neighbors(double x);

/// Seeded stream of 32-bit uniforms consumed by stochastic rounding.
/// Every stochastic rounding call consumes exactly one draw.
class SrStream {
 public:
  explicit SrStream(std::uint64_t seed = 0) noexcept : gen_(seed) {}

  std::uint32_t draw() noexcept { return gen_.next_u32(); }

  std::uint64_t state() const noexcept { return gen_.state(); }
  void set_state(std::uint64_t s) noexcept { gen_.set_state(s); }

 private:
  SplitMix64 gen_;
};

enum class RoundingKind { kNearestEven, kStochastic };

/// A rounding policy. Stochastic mode owns its random stream and advances it.
/// Out-of-range inputs saturate to +-kMaxFinite and bump saturations().
class RoundingMode {
 public:
  static RoundingMode nearest_even() noexcept { return RoundingMode(RoundingKind::kNearestEven, 0); }
  static RoundingMode stochastic(std::uint64_t seed) noexcept {
    return RoundingMode(RoundingKind::kStochastic, seed);
  }

  RoundingKind kind() const noexcept { return kind_; }
  SrStream& stream() noexcept { return stream_; }
  const SrStream& stream() const noexcept { return stream_; }

  std::uint64_t saturations() const noexcept { return saturations_; }
  void note_saturation() noexcept { ++saturations_; }

 private:
  RoundingMode(RoundingKind kind, std::uint64_t seed) noexcept : kind_(kind), stream_(seed) {}

  RoundingKind kind_;
  SrStream stream_;
  std::uint64_t saturations_ = 0;
};

/// Rounds x to bfloat16. NaN throws std::domain_error.
Word round_bf16(double x, RoundingMode& mode);

/// Same as decode(round_bf16(x, mode)) but skips the encode step.
double round_value(double x, RoundingMode& mode);

/// Left fold acc <- round(acc + addend) starting from round(init).
Word accumulate(std::span<const double> addends, double init, RoundingMode& mode);

/// Numeric mode of a training run. kF32 is the unquantized reference path.
enum class NumericMode { kF32, kBf16Rne, kBf16Sr };

std::string_view to_string(NumericMode mode) noexcept;
/// Accepts "f32", "bf16-rne", "bf16-sr"; throws std::invalid_argument otherwise.
NumericMode parse_numeric_mode(std::string_view text);

/// Applies the rounding policy of a NumericMode to primitive-op outputs.
class Quantizer {
 public:
  explicit Quantizer(NumericMode mode = NumericMode::kF32, std::uint64_t sr_seed = 0) noexcept;

  NumericMode mode() const noexcept { return mode_; }
  bool active() const noexcept { return mode_ != NumericMode::kF32; }

  double apply(double x) { return active() ? round_value(x, rounding_) : x; }
  void apply(std::span<double> xs);

  RoundingMode& rounding() noexcept { return rounding_; }
  const RoundingMode& rounding() const noexcept { return rounding_; }

  std::uint64_t stream_state() const noexcept { return rounding_.stream().state(); }
  void set_stream_state(std::uint64_t s) noexcept { rounding_.stream().set_state(s); }

 private:
  NumericMode mode_;
  RoundingMode rounding_;
};

/// Dense row-major matrix used at the quantized-op boundary.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// A * B with double accumulation and one rounding per output entry
/// (row-major order). Throws std::invalid_argument on a dimension mismatch.
Matrix quantized_matmul(const Matrix& a, const Matrix& b, Quantizer& quantizer);

}  // namespace desktrain::bf16
