#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mmtpp {

enum class ErrorCode {
  NonMonotoneTime,
  TypeOutOfRange,
  NonFiniteTime,
  BeyondHorizon,
  ParseError,
  SchemaError,
  NonFiniteInterval,
  NegativeInterval,
  WrongArity,
  UnknownType,
  TextEncodingError,
  BudgetTooSmall,
  GrammarError,
  TooShortSequence,
  EmptySeries,
  UnstableModel,
  DivergedOptimization,
  QuadratureFailure,
  ContextOverflow,
  FeatureCountMismatch,
  NonFiniteLoss,
  OutOfCoverage,
  MissingLandmark,
  InsufficientCandidates,
  EmptyAfterExclusion,
  LengthMismatch,
  EmptyBin,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Domain error carrying a machine-readable code. `index` is the 1-based
// position of the offending element when one applies (event, line, token).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(message), code_(code), index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> index_;
};

}  // namespace mmtpp
