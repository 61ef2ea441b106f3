#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ifk {

/// Entry point of the `ifk` tool. Exit codes: 0 success, 1 usage or
/// config error, 2 numeric failure. Diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

/// Help text of the top-level command.
std::string cli_help();

}  // namespace ifk
