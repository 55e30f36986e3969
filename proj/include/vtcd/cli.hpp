#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vtcd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;

// Runs one `vtcd` invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vtcd::cli
