#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfpolicy::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

// Runs one command line (argv[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfpolicy::cli
