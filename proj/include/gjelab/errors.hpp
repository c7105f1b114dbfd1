#pragma once

#include <stdexcept>
#include <string>

namespace gjelab {

enum class ErrorCode {
  ParseSyntax,
  UnknownIdentifier,
  DimensionMismatch,
  OrderTooHigh,
  EvalDomain,
  InvalidDomainBox,
  A2Violation,
  NoConvergence,
  LeftDomain,
  SingularE,
  SectionTouchesBoundary,
  SupportSolveFailed,
  InvalidSection,
  InverseNoConvergence,
  DegenerateInput,
  InterpolationOutOfRange,
  NewtonDiverged,
  EllipticityLost,
  NonpositiveRHS,
  StageTooDeep,
  RangeError,
  ConfigInvalid,
  SchemaMismatch,
};

const char* error_code_name(ErrorCode c);

/// Single exception type for the whole library; the code identifies the
/// failure mode so callers (and tests) can dispatch on it.
class GjeError : public std::runtime_error {
 public:
  GjeError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gjelab
