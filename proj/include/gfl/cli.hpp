#pragma once

#include <string>
#include <vector>

namespace gfl {

// Entry point for the `gfl` tool.  Parses the subcommand and flags, runs it,
// writes artifacts atomically, prints a one-line summary and returns the
// process exit code:
//   0  success
//   2  invalid configuration (every message names the offending key)
//   3  infeasible metric problem
//   4  a verification check failed
int run(const std::vector<std::string>& args);  // args without program name
int run(int argc, char** argv);

}  // namespace gfl
