#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ifk {

enum class ErrorCode {
  NotSPD,
  DimMismatch,
  UnknownModel,
  NonFiniteEvaluation,
  NonFiniteState,
  SingularInnovation,
  RankDeficient,
  InputCovSingular,
  SingularQ,
  SingularR,
  SingularJ,
  DegenerateNoise,
  NoConvergence,
  EmptyEnsemble,
  MissingBound,
  MissingInput,
  IoError,
  ConfigError,
  UsageError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI, the bench harness) can map it to an exit status or a
/// per-run divergence flag without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ifk
