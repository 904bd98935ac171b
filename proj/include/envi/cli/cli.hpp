#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace envi::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,       // unknown flag, bad config value
  kUnreadable = 3,  // missing or malformed input file
  kNonFinite = 4,   // non-finite or diverging objective, failed factorization
};

// Runs one subcommand. `args` excludes the program name. Errors are reported
// on `err` as a single JSON object and mapped to an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace envi::cli
