// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "sppl/mlm_model.hpp"
#include "sppl/optim.hpp"
#include "sppl/subseg.hpp"
#include "sppl/xl_model.hpp"

namespace sppl {

// Flat key=value run configuration. Defaults depend on kind; echo_config
// writes every key back so checkpoints embed a complete, reparseable copy.
struct RunConfig {
  std::string kind;  // "mlm" | "xl"
  std::uint64_t seed = 1;
  MarkingScheme scheme = MarkingScheme::left_right_marked;
  std::size_t batch_size = 8;
  LrSchedule schedule{1e-3, 100, 1000, 1e-5};
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t validate_every = 200;  // 0: never
  double grad_clip = 1.0;            // 0: no clipping
  double dropout_prob = 0.1;

  // Architecture. hidden_size/num_layers/num_heads/intermediate_size are
  // shared; max_position and mask_prob are mlm-only; head_size, seg_len and
  // mem_len are xl-only.
  std::size_t num_layers = 0;
  std::size_t hidden_size = 0;
  std::size_t num_heads = 0;
  std::size_t intermediate_size = 0;
  std::size_t max_position = 128;
  double mask_prob = 0.15;
  std::size_t head_size = 32;
  std::size_t seg_len = 16;
  std::size_t mem_len = 16;
  std::size_t max_len = 128;  // longest framed training sentence (mlm batching)

  std::size_t vocab_size = 0;  // 0: resolved from the vocab file at launch
  std::string train_data;
  std::string valid_data;
  std::string vocab;

  EncoderConfig encoder_config() const;  // requires kind == "mlm", vocab_size set
  XLConfig xl_config() const;            // requires kind == "xl", vocab_size set
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);
std::string echo_config(const RunConfig& run);

}  // namespace sppl
