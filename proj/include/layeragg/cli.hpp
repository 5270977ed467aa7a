#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace layeragg {

/// Exit codes: 0 success, 1 invalid flags or configuration, 2 runtime failure
/// (I/O, malformed files, divergence, failed gradient check).
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Runs one CLI invocation. args excludes the program name. Reports go to out
/// (or the --report path), diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace layeragg
