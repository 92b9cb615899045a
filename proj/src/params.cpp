// SPDX-License-Identifier: Apache-2.0
#include "sppl/params.hpp"

#include "sppl/error.hpp"

namespace sppl {

Tensor& ParamStore::insert(const std::string& name, Tensor t) {
  if (index_.count(name)) throw_data("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParamStore::create(const std::string& name, Shape shape, Rng& rng, double stddev) {
  return insert(name, Tensor::randn(std::move(shape), rng, stddev, /*requires_grad=*/true));
}

Tensor& ParamStore::create_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape), /*requires_grad=*/true));
}

Tensor& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw_data("unknown parameter: " + name);
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw_data("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

}  // namespace sppl
