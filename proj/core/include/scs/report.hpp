#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scs {

// Shortest decimal form that round-trips, '.' separator, locale independent.
std::string format_number(double value);
std::string format_number(const std::optional<double>& value);  // empty when absent

// Plot-ready CSV: header row, LF line endings, RFC 4180 quoting.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> row);
  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Atomic write (temporary sibling + rename).
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace scs
