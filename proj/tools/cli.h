#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace omni {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitCompute = 3;
inline constexpr int kExitNonConvergence = 4;
inline constexpr int kExitStale = 5;

// args excludes the program name.  key=value results go to `out`, errors to
// `err`.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace omni
