#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace scs::cli {

inline constexpr std::string_view kVersion = SCS_VERSION;

// One invocation of the scs tool; `args` excludes the program name.
// Exit status: 0 on success, 2 for usage and configuration errors, 1 for
// runtime failures. Errors are written to `err` as one JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scs::cli
