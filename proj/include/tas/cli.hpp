#pragma once

#include <string>
#include <vector>

namespace tas::cli {

// Exit codes: 0 success, 1 usage/validation, 2 runtime divergence, 3 I/O.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without the program name

}  // namespace tas::cli
