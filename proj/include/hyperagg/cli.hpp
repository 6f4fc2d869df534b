#pragma once

#include <string>
#include <vector>

namespace hyperagg {

// Runs one subcommand. Returns 0 on success, 1 on a usage error (help text
// on stderr) and 2 on a runtime error.
int cli_dispatch(int argc, char** argv);
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace hyperagg
