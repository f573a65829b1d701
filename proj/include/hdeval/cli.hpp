#pragma once

#include <string>
#include <vector>

namespace hdeval {

// Exit codes: 0 success, 1 runtime failure (transport, replay miss, ...),
// 2 usage or invalid input.
int run_cli(int argc, const char* const* argv);
// Same, without the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace hdeval
