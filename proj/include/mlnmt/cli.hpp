#pragma once

#include <string>
#include <vector>

namespace mlnmt::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run(int argc, const char* const* argv);
// args[0] is the program name.
int run(const std::vector<std::string>& args);

}  // namespace mlnmt::cli
