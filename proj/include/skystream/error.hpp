#pragma once

#include <stdexcept>
#include <string>

namespace skystream {

enum class ErrorCode {
  OutOfWorld,
  NoOverlap,
  EmptyIntersection,
  DuplicateQid,
  OutOfBounds,
  Unsplittable,
  NoImprovement,
  RegionMismatch,
  InvalidDirection,
  ProtocolViolation,
  EmptyCorpus,
  Io,
  Parse,
  InvalidArgument,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::OutOfWorld: return "OutOfWorld";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::DuplicateQid: return "DuplicateQid";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::Unsplittable: return "Unsplittable";
    case ErrorCode::NoImprovement: return "NoImprovement";
    case ErrorCode::RegionMismatch: return "RegionMismatch";
    case ErrorCode::InvalidDirection: return "InvalidDirection";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace skystream
