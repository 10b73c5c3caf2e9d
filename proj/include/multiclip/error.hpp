#pragma once

#include <stdexcept>
#include <string>

namespace multiclip {

enum class ErrorKind {
  Config,
  Load,
  Validation,
  Input,
  Numeric,
  Tokenization,
  Proposal,
  DegenerateFusion,
  DegenerateProjection,
  DegenerateRotation,
  Projection,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Load: return "load";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Input: return "input";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Tokenization: return "tokenization";
    case ErrorKind::Proposal: return "proposal";
    case ErrorKind::DegenerateFusion: return "degenerate-fusion";
    case ErrorKind::DegenerateProjection: return "degenerate-projection";
    case ErrorKind::DegenerateRotation: return "degenerate-rotation";
    case ErrorKind::Projection: return "projection";
  }
  return "unknown";
}

}  // namespace multiclip
