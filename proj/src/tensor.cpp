// SPDX-License-Identifier: Apache-2.0
#include "sppl/tensor.hpp"

#include <cmath>

#include "sppl/error.hpp"

namespace sppl {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->value.assign(shape_size(shape), 0.0);
  t.node_->shape = std::move(shape);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.node_->value) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape)) {
    throw_data("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
               " values");
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.node_->value) v = stddev * rng.normal();
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
const std::vector<double>& Tensor::values() const { return node_->value; }
std::vector<double>& Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw_data("item() requires a scalar tensor, got " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw_data("index rank mismatch");
  std::size_t off = 0;
  std::size_t i = 0;
  for (const std::size_t v : idx) {
    off = off * s[i] + v;
    ++i;
  }
  return node_->value[off];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

const std::vector<double>& Tensor::grad_raw() const { return node_->grad; }

std::vector<double>& Tensor::grad_buffer() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

std::vector<double> Tensor::grad_vector() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  // Release rather than zero-fill: "empty" is the canonical all-zero form
  // and lets backward closures skip untouched outputs.
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = node_->shape;
  t.node_->value = node_->value;
  t.node_->requires_grad = false;
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> step) { steps_.push_back(std::move(step)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw_data("backward requires a scalar loss");
  if (!loss.requires_grad()) throw_data("loss is not recorded on a tape");
  Tensor seed = loss;
  seed.grad_buffer()[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

bool tracing(const Tensor& a) { return Tape::active() != nullptr && a.requires_grad(); }
bool tracing(const Tensor& a, const Tensor& b) {
  return Tape::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

}  // namespace sppl
