#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace urbannav {

/// Runs one command line (args[0] is the program name). Returns the process
/// exit status: 0 success, 1 failure (including replay divergence), 2 usage.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace urbannav
