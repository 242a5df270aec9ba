#include "mmtpp/error.hpp"

namespace mmtpp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonMonotoneTime: return "NonMonotoneTime";
    case ErrorCode::TypeOutOfRange: return "TypeOutOfRange";
    case ErrorCode::NonFiniteTime: return "NonFiniteTime";
    case ErrorCode::BeyondHorizon: return "BeyondHorizon";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::NonFiniteInterval: return "NonFiniteInterval";
    case ErrorCode::NegativeInterval: return "NegativeInterval";
    case ErrorCode::WrongArity: return "WrongArity";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::TextEncodingError: return "TextEncodingError";
    case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::GrammarError: return "GrammarError";
    case ErrorCode::TooShortSequence: return "TooShortSequence";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::UnstableModel: return "UnstableModel";
    case ErrorCode::DivergedOptimization: return "DivergedOptimization";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::FeatureCountMismatch: return "FeatureCountMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::OutOfCoverage: return "OutOfCoverage";
    case ErrorCode::MissingLandmark: return "MissingLandmark";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::EmptyAfterExclusion: return "EmptyAfterExclusion";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyBin: return "EmptyBin";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mmtpp
