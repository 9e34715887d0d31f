#pragma once

#include <stdexcept>
#include <string>

namespace mrhbe {

enum class ErrorCode {
  ZeroNorm,
  DimensionMismatch,
  BadMagic,
  TruncatedFile,
  IoError,
  BadParams,
  DomainExceeded,
  CapBudgetExceeded,
  BadDelta,
  DomainError,
  LemmaPositiveViolated,
  NotBuilt,
  NormMismatch,
  ReplicaBudgetExceeded,
  OutOfRange,
  EmptyDataset,
  InfeasibleTarget,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace mrhbe
