#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "convotd/config.hpp"

namespace convotd {

/// Executes a resolved command. Progress lines go to log. Throws on failure.
void run_command(const RunConfig& cfg, std::ostream& log);

/// Whole CLI: parse, resolve, run. Returns the exit status (0 ok, 1 runtime failure,
/// 2 usage error). Failures print one JSON line {"error", "command", "status"} to err.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace convotd
