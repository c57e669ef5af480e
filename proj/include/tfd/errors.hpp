#pragma once

#include <stdexcept>
#include <string>

namespace tfd {

/// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TFD_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

TFD_DEFINE_ERROR(DimensionError)    // incompatible tensor shapes
TFD_DEFINE_ERROR(DomainError)       // value outside an op's domain
TFD_DEFINE_ERROR(ContractError)     // precondition violated by the caller
TFD_DEFINE_ERROR(ConfigError)       // inconsistent model / run configuration
TFD_DEFINE_ERROR(StateError)        // operation invalid in the current state
TFD_DEFINE_ERROR(CorruptionError)   // on-disk data failed validation
TFD_DEFINE_ERROR(ParseError)        // malformed file content
TFD_DEFINE_ERROR(LabelError)        // invalid ground-truth labels
TFD_DEFINE_ERROR(SizeError)         // input exceeds an algorithmic bound
TFD_DEFINE_ERROR(ShapeError)        // checkpoint / parameter shape mismatch
TFD_DEFINE_ERROR(NumericError)      // NaN / Inf encountered during training

#undef TFD_DEFINE_ERROR

}  // namespace tfd
