// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace desktrain {

/// Normalization gains are tracked separately so weight decay can skip them.
enum class ParamKind { kMatrix, kNorm };

/// A named dense tensor stored row-major in double precision.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
  ParamKind kind = ParamKind::kMatrix;

  Tensor() = default;
  Tensor(std::string n, std::vector<std::size_t> s, ParamKind k = ParamKind::kMatrix, double fill = 0.0);

  std::size_t size() const noexcept { return data.size(); }
  std::span<double> values() noexcept { return data; }
  std::span<const double> values() const noexcept { return data; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// An ordered collection of tensors. Model parameters, gradients and
/// optimizer moments all share this layout.
class TensorSet {
 public:
  TensorSet() = default;
  explicit TensorSet(std::vector<Tensor> tensors) : tensors_(std::move(tensors)) {}

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }

  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  void push_back(Tensor t) { tensors_.push_back(std::move(t)); }

  /// Total number of scalars.
  std::size_t numel() const noexcept;

  /// Same layout as this set, filled with `fill`.
  TensorSet zeros_like(double fill = 0.0) const;

  /// True when both sets have identical names and shapes.
  bool congruent(const TensorSet& other) const noexcept;

  /// Throws std::invalid_argument naming `what` unless congruent.
  void require_congruent(const TensorSet& other, const char* what) const;

  friend bool operator==(const TensorSet&, const TensorSet&) = default;

 private:
  std::vector<Tensor> tensors_;
};

using ModelParams = TensorSet;
using GradientSet = TensorSet;

}  // namespace desktrain
