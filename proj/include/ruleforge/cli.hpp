#pragma once

#include <string>
#include <vector>

namespace ruleforge {

// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);
// Same, with args excluding the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace ruleforge
