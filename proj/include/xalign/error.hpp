#pragma once

#include <stdexcept>
#include <string>

namespace xalign {

enum class ErrorKind {
  format,          // malformed bytes on disk
  consistency,     // two inputs disagree (header vs sidecar, class rows)
  validation,      // values violate an invariant (NaN, empty gold set)
  io,              // cannot open / read / write
  degenerate,      // zero-norm rows and similar
  parameter,       // caller-supplied parameter out of range
  shape,           // matrix dimension mismatch
  lookup,          // unknown label
  insufficient,    // too few rows / classes / items
  rank_deficiency  // numerical: matrix rank lower than requested
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format error";
    case ErrorKind::consistency: return "consistency error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::degenerate: return "degenerate-input error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::lookup: return "lookup error";
    case ErrorKind::insufficient: return "insufficient-items error";
    case ErrorKind::rank_deficiency: return "rank-deficiency error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process exit code for an error: 1 usage/parameter, 2 data, 3 numerical.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return 1;
    case ErrorKind::rank_deficiency: return 3;
    default: return 2;
  }
}

}  // namespace xalign
