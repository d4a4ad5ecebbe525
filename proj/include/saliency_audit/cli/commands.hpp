#pragma once

#include <string>
#include <vector>

namespace sa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad arguments, config or inputs
inline constexpr int kExitRuntime = 2;  // I/O or numerical failure

/// Parses the command line and runs one subcommand; returns the exit code.
int run(int argc, const char* const* argv);
/// Same, with args[0] taken as the program name.
int run(const std::vector<std::string>& args);

}  // namespace sa::cli
