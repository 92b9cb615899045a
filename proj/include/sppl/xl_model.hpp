// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sppl/corpusio.hpp"
#include "sppl/params.hpp"
#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"

namespace sppl {

// Unidirectional LM with segment-level recurrence (cached, gradient-isolated
// memory) and relative positional attention. Attention width num_heads *
// head_size may differ from hidden_size; the q/k/v and output projections
// bridge the two.
struct XLConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 2;
  std::size_t head_size = 32;
  std::size_t intermediate_size = 256;
  std::size_t seg_len = 16;
  std::size_t mem_len = 16;
  double dropout_prob = 0.1;
  std::size_t vocab_size = 0;

  void validate() const;  // usage error on violation
};

// Per-layer cache of the hidden states that entered each layer, oldest
// first, each [batch x m x hidden] with m <= mem_len. Entries are detached:
// gradients never flow into cached segments.
struct XLMemory {
  std::vector<Tensor> layers;
  std::size_t batch = 0;

  std::size_t len() const { return layers.empty() ? 0 : layers[0].dim(1); }
};

class XlModel {
 public:
  XlModel(XLConfig config, std::uint64_t seed);

  const XLConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  XLMemory init_memory(std::size_t batch_size) const;

  struct SegmentOut {
    Tensor logits;  // [rows x cols x vocab], next-token scores
    XLMemory memory;
  };

  // Causal attention over [memory || segment]; new memory holds the last
  // mem_len positions per layer. rng is untouched in eval mode.
  SegmentOut forward_segment(const Batch& tokens, const XLMemory& memory, bool train,
                             Rng& rng) const;
  SegmentOut forward_segment(const Batch& tokens, const XLMemory& memory) const;  // eval

 private:
  XLConfig cfg_;
  ParamStore params_;
};

// Mean next-token NLL (natural log) over positions whose target is not PAD.
Tensor xl_loss(const Tensor& logits, std::span<const int> next_token_targets);

}  // namespace sppl
