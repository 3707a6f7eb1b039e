#pragma once

#include <stdexcept>
#include <string>

namespace fw {

enum class ErrorCode {
  DegenerateControlPoints,
  LengthMismatch,
  InsufficientKeypoints,
  InsufficientCorrespondences,
  NoCompatibleCandidates,
  ParseError,
  ValidationError,
  EmptyIntersection,
  InvalidRotation,
  NonFiniteGradient,
  EmptyImage,
  GridMismatch,
  InvalidConfig,
  IoError,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace fw
