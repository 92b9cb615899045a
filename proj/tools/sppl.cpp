// SPDX-License-Identifier: Apache-2.0
#include "sppl/cli.hpp"

int main(int argc, char** argv) { return sppl::cli::run(argc, argv); }
