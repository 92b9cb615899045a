// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "sppl/rng.hpp"

namespace sppl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense f64 tensor. Value-semantic handle to a shared node so recorded
// backward closures and user code see the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape()[i]; }
  std::size_t size() const;

  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();

  double item() const;  // scalar tensors only
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  // Gradient buffer; empty means all-zero. grad_vector materializes zeros.
  const std::vector<double>& grad_raw() const;
  std::vector<double>& grad_buffer();  // allocates zeros on first use
  std::vector<double> grad_vector() const;
  void zero_grad();

  // Copy of the values with gradient tracking severed.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Node> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the active recorder for
// the current thread (restored on destruction); ops record their backward
// steps in execution order, which backward() replays once in reverse.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> step);
  std::size_t size() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Errors if loss is not a
  // scalar or was not recorded.
  void backward(const Tensor& loss);

  static Tape* active();

 private:
  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

// True when the active tape should record an op consuming these inputs.
bool tracing(const Tensor& a);
bool tracing(const Tensor& a, const Tensor& b);

}  // namespace sppl
