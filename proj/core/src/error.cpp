#include "mrhbe/error.hpp"

namespace mrhbe {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::DomainExceeded: return "DomainExceeded";
    case ErrorCode::CapBudgetExceeded: return "CapBudgetExceeded";
    case ErrorCode::BadDelta: return "BadDelta";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::LemmaPositiveViolated: return "LemmaPositiveViolated";
    case ErrorCode::NotBuilt: return "NotBuilt";
    case ErrorCode::NormMismatch: return "NormMismatch";
    case ErrorCode::ReplicaBudgetExceeded: return "ReplicaBudgetExceeded";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InfeasibleTarget: return "InfeasibleTarget";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace mrhbe
