#include "scs/report.hpp"

#include <charconv>
#include <cmath>

#include "binary_io.hpp"
#include "scs/error.hpp"

namespace scs {

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string format_number(const std::optional<double>& value) {
  return value ? format_number(*value) : std::string();
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw Error(ErrorKind::kInput, "CSV row has " + std::to_string(row.size()) +
                                       " fields, header has " + std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto emit = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += quote(row[i]);
    }
    out += '\n';
  };
  emit(header_);
  for (const auto& row : rows_) emit(row);
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  detail::write_file_atomic(path, text);
}

std::string read_text_file(const std::filesystem::path& path) { return detail::read_file(path); }

}  // namespace scs
