// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace sppl::cli {

// Dispatches one command. Never throws; exit codes are 0 success, 1 usage
// error, 2 data error, 3 numeric failure. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

// Full flag reference, generated from the live parser.
std::string helptext();

// (command, flag names) pairs from the parser, for helptext agreement tests.
std::vector<std::pair<std::string, std::vector<std::string>>> command_flags();

}  // namespace sppl::cli
