#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scs::cli {

using nlohmann::json;

// Experiment configuration: one JSON object, keys addressed as "a.b" for
// nested objects. Every value read (defaults included) is recorded, so
// resolved() is the complete configuration a run used. Relative paths
// resolve against the config file's directory; existence is checked when
// the path is read. All problems raise Error(kConfig).
class Config {
 public:
  Config(json data, std::filesystem::path base_dir);

  bool has(std::string_view key) const;

  std::size_t count(std::string_view key, std::optional<std::size_t> fallback = std::nullopt);
  double number(std::string_view key, std::optional<double> fallback = std::nullopt);
  bool flag(std::string_view key, bool fallback);
  std::string text(std::string_view key, std::optional<std::string> fallback = std::nullopt);
  std::uint64_t seed(std::string_view key, std::uint64_t fallback);
  std::vector<double> numbers(std::string_view key);
  std::vector<std::size_t> counts(std::string_view key, std::vector<std::size_t> fallback);
  std::vector<std::string> texts(std::string_view key, std::vector<std::string> fallback);

  // Input paths must exist.
  std::filesystem::path input(std::string_view key);
  std::vector<std::filesystem::path> inputs(std::string_view key);
  // Output path; need not exist.
  std::filesystem::path output(std::string_view key, std::string_view fallback);

  // Raw sub-object, recorded as-is.
  const json& object(std::string_view key);

  const json& resolved() const noexcept { return resolved_; }

 private:
  const json* find(std::string_view key) const;
  void record(std::string_view key, json value);
  std::filesystem::path absolute(const std::string& text) const;
  [[noreturn]] void fail(std::string_view key, const std::string& what) const;

  json data_;
  std::filesystem::path base_;
  json resolved_ = json::object();
};

// Loads a config file. A run manifest is accepted too: its "config" object
// is used, which reproduces that run.
json load_config_file(const std::filesystem::path& path);

// Rejects keys outside the known schema.
void check_keys(const json& config);

}  // namespace scs::cli
