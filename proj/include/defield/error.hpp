#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace defield {

/// Distinct failure classes. The CLI maps each to its own exit status.
enum class ErrorCode {
  InvalidArgument = 2,
  GeometryMismatch = 3,
  NonFinite = 4,
  DegenerateInput = 5,
  FileNotFound = 6,
  MalformedFile = 7,
  Io = 8,
  EmptyInput = 9,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace defield
