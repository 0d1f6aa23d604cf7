#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flowfuse::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

/// Runs the tool with `args` (program name excluded). Results go to `out`,
/// diagnostics to `err`. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace flowfuse::cli
