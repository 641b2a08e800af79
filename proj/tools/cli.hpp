#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lnscope::cli {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lnscope::cli
