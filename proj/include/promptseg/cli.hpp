#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace promptseg {

/// Process exit codes of the command-line tool.
enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_runtime = 3 };

/// Runs the command-line tool on `args` (without the program name).
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace promptseg
