#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sbcq::app {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Entry point of the `sbcq` tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sbcq::app
