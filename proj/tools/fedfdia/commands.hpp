#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fedfdia::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kDivergence = 3,
};

/// Runs the command line `args` (args[0] is the program name) and returns
/// the process exit code. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Splices `key=value` lines from `--config FILE` into the argument list as
/// `--key value`, skipping keys already given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace fedfdia::cli
