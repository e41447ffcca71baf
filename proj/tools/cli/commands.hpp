#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "config.hpp"

namespace scs::cli {

// State of one subcommand invocation.
struct Run {
  Config& config;
  std::filesystem::path out_dir;
  unsigned jobs = 1;
  std::uint64_t seed = 0;
  std::ostream& log;
  json seeds = json::object();
  std::vector<std::string> outputs;  // relative to out_dir, in write order

  // Atomic write below out_dir; parents are created.
  void write(const std::string& relative, std::string_view bytes);
};

struct Command {
  const char* name;
  const char* help;
  std::vector<std::string> flags;  // subcommand-specific flags, without "--"
  void (*body)(Run&);
};

const std::vector<Command>& commands();

}  // namespace scs::cli
