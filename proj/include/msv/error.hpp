#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msv {

enum class ErrorCode {
  PointOutsideRegion,
  PointTooNearBoundary,
  NonSPDMetric,
  DegeneratePlane,
  NonOrthonormalInput,
  BadK,
  BadDimension,
  DivergentIntegral,
  NegativeLambda,
  UnconvergedODE,
  EnvelopeViolated,
  NonPositiveTrajectory,
  GridTooShort,
  LeftChartRegion,
  SingularPInversion,
  TraceInequalityViolated,
  BoundViolated,
  RadiusExceedsChart,
  TooFewDirections,
  DegenerateImmersion,
  DisconnectedMesh,
  NonPositiveF,
  CompatibilityUnreachable,
  UnconvergedSolver,
  BadCodimension,
  NotMinimal,
  SchemaError,
  RegistryMiss,
  IOError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace msv
