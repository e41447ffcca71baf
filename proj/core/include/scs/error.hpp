#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scs {

enum class ErrorKind {
  kConfig,              // invalid configuration or dimensions
  kInput,               // bad caller-supplied values (token ids, sizes)
  kNumeric,             // non-finite intermediate
  kParse,               // malformed text input (JSON-lines, JSON)
  kValidation,          // well-formed input violating a contract
  kFormat,              // binary file layout violation
  kUnsupportedVersion,  // binary file from a newer writer
  kTruncation,          // context overflow
  kIo,                  // filesystem failures
  kDegenerate,          // mathematically undefined result
  kUsage,               // CLI usage errors
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the toolkit; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace scs
