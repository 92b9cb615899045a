// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sppl/config.hpp"
#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"

namespace sppl {

// Complete resumable training state. save -> load -> save is byte-identical
// and a resumed run continues the metric log exactly as the unbroken run
// would have.
struct Checkpoint {
  std::uint64_t step = 0;
  std::string config_echo;  // resolved run config, reparseable
  Rng::State train_rng{};
  std::vector<std::pair<std::string, Tensor>> tensors;  // parameter order
  std::uint64_t adam_t = 0;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> adam_slots;  // (m, v)
  std::vector<Tensor> xl_memory;  // carried stream memory; empty for mlm
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainOutput {
  Checkpoint checkpoint;
  std::string checkpoint_path;  // <out_dir>/model.spck
  std::string log_path;         // <out_dir>/metrics.tsv
};

// Metric log lines are "step lr loss accuracy train|valid" for mlm and
// "step lr loss ppl train|valid" for xl, tab-separated, appended in step
// order. resume_from restores a checkpoint (config echo must match).
// stop_after > 0 pauses the run at that step; the lr schedule still spans
// total_steps, so a paused-and-resumed run replays an unbroken one exactly.
TrainOutput train_mlm(const RunConfig& run, const std::string& out_dir,
                      const std::string& resume_from = "", std::uint64_t stop_after = 0);
TrainOutput train_xl(const RunConfig& run, const std::string& out_dir,
                     const std::string& resume_from = "", std::uint64_t stop_after = 0);

// Fills run.vocab_size from the vocab file when unset; errors if a set value
// disagrees with the file.
void resolve_vocab_size(RunConfig& run);

// Copies checkpoint tensors into an existing parameter table; names, order
// and shapes must match exactly ("config mismatch" otherwise).
void load_parameters(const Checkpoint& ck, ParamStore& params);

}  // namespace sppl
