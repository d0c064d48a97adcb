#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace idc::cli {

// Parses `args` (program name excluded) and runs the selected command.
// Subcommands: generate, invert, eval, bench build, bench validate.
// Exit codes: 0 success, 2 validation failure, 3 adapter failure,
// 4 config error, 1 unexpected error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace idc::cli
