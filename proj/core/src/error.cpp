#include "nacf/error.hpp"

namespace nacf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EmptyTape: return "EmptyTape";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::LengthExceedsMax: return "LengthExceedsMax";
    case ErrorCode::LengthOutOfRange: return "LengthOutOfRange";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::IndexOutOfVocab: return "IndexOutOfVocab";
    case ErrorCode::NotADistribution: return "NotADistribution";
    case ErrorCode::EmptySentence: return "EmptySentence";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::UnknownSplit: return "UnknownSplit";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace nacf
