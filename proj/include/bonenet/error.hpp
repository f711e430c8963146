#pragma once

#include <stdexcept>
#include <string>

namespace bonenet {

enum class ErrorCode {
  InvalidShape,
  ShapeMismatch,
  NotScalar,
  DegenerateBatch,
  InvalidRate,
  InvalidConfig,
  InvalidMetric,
  EmptyDataset,
  DivergedTraining,
  TooFewSamples,
  IoError,
  FormatError,
  UnknownLayer,
  Undefined,
  ConfigError,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bonenet
