#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace decisionbench::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name, e.g. {"simulate", "--seed", "7"}.
int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace decisionbench::cli
