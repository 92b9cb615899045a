// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"

namespace sppl {

// Named trainable tensors. Registration order is the serialization order,
// so models must create parameters deterministically.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Shape shape, Rng& rng, double stddev);
  Tensor& create_zeros(const std::string& name, Shape shape);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }
  std::size_t total_values() const;

  void zero_grads();

 private:
  Tensor& insert(const std::string& name, Tensor t);

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sppl
