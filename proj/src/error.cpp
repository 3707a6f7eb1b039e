#include "facewarp/error.hpp"

namespace fw {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::DegenerateControlPoints: return "DegenerateControlPoints";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InsufficientKeypoints: return "InsufficientKeypoints";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::NoCompatibleCandidates: return "NoCompatibleCandidates";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::InvalidRotation: return "InvalidRotation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace fw
