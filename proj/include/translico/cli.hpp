#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace translico {

inline constexpr const char* kVersion = "0.1.0";

// Runs one subcommand. args excludes the program name. Returns 0 on success,
// 1 on a runtime error and 2 on a usage error; diagnostics go to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace translico
