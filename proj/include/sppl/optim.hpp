// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "sppl/params.hpp"

namespace sppl {

// Linear warmup to peak_lr over warmup_steps, then cosine annealing down to
// min_lr at total_steps, constant min_lr after. Steps are 1-based: the first
// optimizer update uses lr_at(1).
struct LrSchedule {
  double peak_lr = 0.0;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 0;
  double min_lr = 0.0;

  double lr_at(std::uint64_t step) const;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm; max_norm <= 0 disables clipping.
double clip_global_norm(ParamStore& params, double max_norm);

class Adam {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, double lr);

  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace sppl
