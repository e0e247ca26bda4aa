#include "msv/error.hpp"

namespace msv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PointOutsideRegion: return "PointOutsideRegion";
    case ErrorCode::PointTooNearBoundary: return "PointTooNearBoundary";
    case ErrorCode::NonSPDMetric: return "NonSPDMetric";
    case ErrorCode::DegeneratePlane: return "DegeneratePlane";
    case ErrorCode::NonOrthonormalInput: return "NonOrthonormalInput";
    case ErrorCode::BadK: return "BadK";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::DivergentIntegral: return "DivergentIntegral";
    case ErrorCode::NegativeLambda: return "NegativeLambda";
    case ErrorCode::UnconvergedODE: return "UnconvergedODE";
    case ErrorCode::EnvelopeViolated: return "EnvelopeViolated";
    case ErrorCode::NonPositiveTrajectory: return "NonPositiveTrajectory";
    case ErrorCode::GridTooShort: return "GridTooShort";
    case ErrorCode::LeftChartRegion: return "LeftChartRegion";
    case ErrorCode::SingularPInversion: return "SingularPInversion";
    case ErrorCode::TraceInequalityViolated: return "TraceInequalityViolated";
    case ErrorCode::BoundViolated: return "BoundViolated";
    case ErrorCode::RadiusExceedsChart: return "RadiusExceedsChart";
    case ErrorCode::TooFewDirections: return "TooFewDirections";
    case ErrorCode::DegenerateImmersion: return "DegenerateImmersion";
    case ErrorCode::DisconnectedMesh: return "DisconnectedMesh";
    case ErrorCode::NonPositiveF: return "NonPositiveF";
    case ErrorCode::CompatibilityUnreachable: return "CompatibilityUnreachable";
    case ErrorCode::UnconvergedSolver: return "UnconvergedSolver";
    case ErrorCode::BadCodimension: return "BadCodimension";
    case ErrorCode::NotMinimal: return "NotMinimal";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::RegistryMiss: return "RegistryMiss";
    case ErrorCode::IOError: return "IOError";
  }
  return "Unknown";
}

}  // namespace msv
