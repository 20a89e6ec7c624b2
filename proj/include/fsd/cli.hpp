#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fsd {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Entry point of the `fsd` tool: subcommands extract, train, eval, score and
// toygen. Never throws; failures are reported on `err` and mapped to an exit
// code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsd
