#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evcma {

/// Error classes surfaced by the library. The CLI maps each to its own exit code.
enum class ErrorKind {
  kParse,            // malformed text input (times, CSV rows, JSON)
  kInvalidRequest,   // a charging request violates grid bounds
  kDegenerate,       // zero availability and similar degenerate inputs
  kConfig,           // inconsistent attack/experiment/detector configuration
  kDimension,        // price/bid/tensor shapes do not line up
  kIdMismatch,       // EVCP id sets or orders differ
  kProtocol,         // OCPP frame decoding/validation
  kState,            // operation called on an object in the wrong state
  kIo,               // file system
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  Error(ErrorKind kind, std::string stage, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  /// Pipeline stage that raised the error, empty outside run_experiment.
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

}  // namespace evcma
