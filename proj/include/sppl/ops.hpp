// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"

namespace sppl {

// Broadcasting elementwise ops (trailing-dim alignment, extents equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// a [..., m, k] x b [..., k, n] -> [..., m, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);

// Mean over non-ignored rows of -log softmax(logits)[target]; natural log.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id);

// Row gather: table [V, H], ids in [0, V) -> [ids.size(), H].
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor sum_all(const Tensor& x);

// Inverted dropout; identity when train is false or p == 0. One uniform
// draw per element in flat order.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

// Relative-position realignment for attention over [memory || segment]:
// x [..., T, D] holds per-distance scores (column d = distance d); output
// [..., T, D] with y[.., i, j] = x[.., i, mem_len + i - j] where valid, 0
// elsewhere.
Tensor rel_gather(const Tensor& x, std::size_t mem_len);

}  // namespace sppl
