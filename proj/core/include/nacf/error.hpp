#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nacf {

enum class ErrorCode {
  ShapeMismatch,
  InvalidProbability,
  NotScalar,
  EmptyTape,
  NonFinite,
  LengthExceedsMax,
  LengthOutOfRange,
  UnknownToken,
  UnknownCategory,
  IndexOutOfVocab,
  NotADistribution,
  EmptySentence,
  EmptyCorpus,
  DivergedLoss,
  MissingFile,
  UnknownSplit,
  InvalidSpec,
  InvalidConfig,
  EmptyInput,
  FormatError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// All library failures are reported through this exception; `code()` is
/// the stable, testable part and `what()` carries the human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nacf
