#pragma once

#include <ostream>
#include <string>
#include <vector>

// Command-line surface. run_cli is the whole program behind tools/main.cpp;
// it is a library function so tests can drive subcommands in-process.
// Subcommands: count, qratio, theory, linsim, train, sweep, emit.

namespace vitcap {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vitcap
