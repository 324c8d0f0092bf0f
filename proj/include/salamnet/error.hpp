#pragma once

#include <stdexcept>
#include <string>

namespace salamnet {

/// Broad failure category. The CLI maps these onto process exit codes.
enum class ErrorKind { Config = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SALAMNET_DEFINE_ERROR(Name, Kind)                      \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(Kind, what) {} \
  };

SALAMNET_DEFINE_ERROR(ConfigError, ErrorKind::Config)
SALAMNET_DEFINE_ERROR(ParseError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(LabelError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(UniquenessError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(SplitError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(RebalanceError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(FitError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(FormatError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(DimensionError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(TrainingError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(PredictionError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(EvaluationError, ErrorKind::Data)
SALAMNET_DEFINE_ERROR(AnalysisError, ErrorKind::Data)

#undef SALAMNET_DEFINE_ERROR

/// Raised when a loss or activation stops being finite.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, int epoch = -1)
      : Error(ErrorKind::Numeric, what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace salamnet
