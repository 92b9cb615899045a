// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "sppl/corpusio.hpp"
#include "sppl/params.hpp"
#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"

namespace sppl {

// Bidirectional encoder trained with the masked-LM objective only: single
// segment, no next-sentence head, sequences framed SOS + tokens + EOS.
struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_size = 128;
  std::size_t num_heads = 4;
  std::size_t intermediate_size = 512;
  std::size_t max_position = 128;
  double dropout_prob = 0.1;
  std::size_t vocab_size = 0;

  void validate() const;  // usage error on violation
};

struct MaskedBatch {
  static constexpr int kIgnore = -1;

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> input_ids;     // [rows x cols]
  std::vector<int> padding_mask;  // 1 = attendable, 0 = pad
  std::vector<int> targets;       // original id where masked, kIgnore elsewhere

  std::size_t target_count() const;
};

struct MaskPolicy {
  double mask_prob = 0.15;
  double mask_frac = 0.8;    // of selected positions: replaced by MASK
  double random_frac = 0.1;  // of selected positions: replaced by a random token
                             // remainder kept unchanged (still predicted)
};

// Independent per-position selection over non-special tokens, row-major.
// Draw protocol (frozen; tests replay it against a reference trace): one
// uniform for selection, then one uniform for the action, then for random
// replacement one uniform_int over non-special ids [5, vocab).
MaskedBatch mask_tokens(const Batch& batch, const MaskPolicy& policy, std::size_t vocab_size,
                        Rng& rng);

class MlmModel {
 public:
  MlmModel(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Logits [rows x cols x vocab]. Dropout only when train; rng is untouched
  // in eval mode, so eval calls are bit-deterministic.
  Tensor encode(const MaskedBatch& batch, bool train, Rng& rng) const;
  Tensor encode(const MaskedBatch& batch) const;  // eval mode

 private:
  EncoderConfig cfg_;
  ParamStore params_;
};

struct MlmMetrics {
  Tensor loss;      // mean cross-entropy over supervised positions, natural log
  double accuracy;  // argmax match rate over supervised positions
};

MlmMetrics mlm_metrics(const Tensor& logits, const MaskedBatch& batch);

}  // namespace sppl
