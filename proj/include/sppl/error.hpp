// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sppl {

// Error severity maps onto the CLI exit codes: usage -> 1, data -> 2,
// numeric -> 3.
enum class ErrKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrKind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrKind::data, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrKind::numeric, msg); }

}  // namespace sppl
