// SPDX-License-Identifier: Apache-2.0
#include "sppl/optim.hpp"

#include <cmath>

#include "sppl/error.hpp"

namespace sppl {

double LrSchedule::lr_at(std::uint64_t step) const {
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (step >= total_steps || total_steps <= warmup_steps) return min_lr;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return min_lr + (peak_lr - min_lr) * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

double clip_global_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params.entries()) {
    for (const double g : t.grad_raw()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw_numeric("non-finite gradient norm");
  if (max_norm <= 0.0 || norm <= max_norm) return norm;
  const double s = max_norm / norm;
  for (auto& [name, t] : params.entries()) {
    if (t.grad_raw().empty()) continue;
    for (auto& v : t.grad_buffer()) v *= s;
  }
  return norm;
}

void Adam::step(ParamStore& params, double lr) {
  if (slots_.empty()) {
    slots_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      const std::size_t n = params.entries()[i].second.size();
      slots_[i].m.assign(n, 0.0);
      slots_[i].v.assign(n, 0.0);
    }
  }
  if (slots_.size() != params.count()) throw_data("optimizer state does not match parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& p = params.entries()[i].second;
    Slot& s = slots_[i];
    if (s.m.size() != p.size()) throw_data("optimizer slot size mismatch for " + params.entries()[i].first);
    const auto& graw = p.grad_raw();
    auto& vals = p.mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double g = graw.empty() ? 0.0 : graw[j];
      if (!std::isfinite(g)) throw_numeric("non-finite gradient in " + params.entries()[i].first);
      s.m[j] = beta1_ * s.m[j] + (1.0 - beta1_) * g;
      s.v[j] = beta2_ * s.v[j] + (1.0 - beta2_) * g * g;
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      vals[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace sppl
