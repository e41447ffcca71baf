#include "scs/error.hpp"

namespace scs {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnsupportedVersion: return "unsupported-version";
    case ErrorKind::kTruncation: return "truncation";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kUsage: return "usage";
  }
  return "unknown";
}

}  // namespace scs
