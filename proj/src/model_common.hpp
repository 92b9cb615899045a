// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>

#include "sppl/ops.hpp"
#include "sppl/params.hpp"
#include "sppl/tensor.hpp"

namespace sppl::detail {

// Large negative additive mask value. Finite so the finiteness checks in the
// ops stay meaningful; exp(-1e30 - max) underflows to exactly 0.
inline constexpr double kMaskedScore = -1e30;

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// [B, T, nh*hd] -> [B, nh, T, hd]
inline Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t head_dim) {
  const std::size_t b = x.dim(0), t = x.dim(1);
  return permute(reshape(x, {b, t, heads, head_dim}), {0, 2, 1, 3});
}

// [B, nh, T, hd] -> [B, T, nh*hd]
inline Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), t = x.dim(2), d = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, t, h * d});
}

inline Tensor& create_ones(ParamStore& params, const std::string& name, Shape shape) {
  Tensor& t = params.create_zeros(name, std::move(shape));
  std::fill(t.mutable_values().begin(), t.mutable_values().end(), 1.0);
  return t;
}

}  // namespace sppl::detail
