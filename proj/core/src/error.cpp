#include "evcma/error.hpp"

namespace evcma {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kInvalidRequest: return "invalid-request";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kIdMismatch: return "id-mismatch";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kState: return "state";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

Error::Error(ErrorKind kind, std::string stage, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message),
      kind_(kind),
      stage_(std::move(stage)) {}

}  // namespace evcma
