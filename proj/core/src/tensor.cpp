// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/tensor.hpp"

#include <functional>
#include <numeric>
#include <stdexcept>

namespace desktrain {

Tensor::Tensor(std::string n, std::vector<std::size_t> s, ParamKind k, double fill)
    : name(std::move(n)), shape(std::move(s)), kind(k) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(count, fill);
}

std::size_t TensorSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

TensorSet TensorSet::zeros_like(double fill) const {
  TensorSet out;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) out.tensors_.emplace_back(t.name, t.shape, t.kind, fill);
  return out;
}

bool TensorSet::congruent(const TensorSet& other) const noexcept {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape ||
        tensors_[i].data.size() != other.tensors_[i].data.size()) {
      return false;
    }
  }
  return true;
}

void TensorSet::require_congruent(const TensorSet& other, const char* what) const {
  if (!congruent(other)) throw std::invalid_argument(std::string(what) + ": tensor sets are not shape-congruent");
}

}  // namespace desktrain
