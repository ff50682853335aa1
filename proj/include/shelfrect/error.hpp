#pragma once

#include <stdexcept>
#include <string>

namespace shelfrect {

/// Broad failure class. The CLI maps these onto process exit codes.
enum class ErrorKind {
  data,     // malformed input or a violated record invariant
  numeric,  // singular systems, points at infinity, non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SHELFRECT_DEFINE_ERROR(Name, Kind)                                              \
  class Name : public Error {                                                           \
   public:                                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, #Name ": " + what) {} \
  };

SHELFRECT_DEFINE_ERROR(SingularSystem, numeric)
SHELFRECT_DEFINE_ERROR(AtInfinity, numeric)
SHELFRECT_DEFINE_ERROR(NonFiniteGradient, numeric)
SHELFRECT_DEFINE_ERROR(EmptyMask, numeric)
SHELFRECT_DEFINE_ERROR(ParseError, data)
SHELFRECT_DEFINE_ERROR(InvariantViolation, data)
SHELFRECT_DEFINE_ERROR(EmptySplit, data)
SHELFRECT_DEFINE_ERROR(ShapeMismatch, data)
SHELFRECT_DEFINE_ERROR(OutOfRange, data)
SHELFRECT_DEFINE_ERROR(MissingPrediction, data)
SHELFRECT_DEFINE_ERROR(IoError, data)

#undef SHELFRECT_DEFINE_ERROR

}  // namespace shelfrect
