#pragma once

#include <string>
#include <vector>

namespace indeed {

/// Entry point for the command-line tool; args exclude the program name.
/// Returns the process exit status.
int cli_run(const std::vector<std::string>& args);

} // namespace indeed
