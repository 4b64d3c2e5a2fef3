#pragma once

#include <stdexcept>
#include <string>

namespace nf {

// Exit-code buckets used by the CLI: config -> 1, data -> 2, runtime -> 3.
enum class ErrorKind { config = 1, data = 2, runtime = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define NF_DEFINE_ERROR(Name, Kind)                                      \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& msg) : Error(ErrorKind::Kind, msg) {} \
  };

// dataset / manifest
NF_DEFINE_ERROR(ManifestError, data)
NF_DEFINE_ERROR(MissingFieldError, data)
NF_DEFINE_ERROR(UnitError, data)
NF_DEFINE_ERROR(DuplicateIdError, data)
NF_DEFINE_ERROR(EmptyManifestError, data)
NF_DEFINE_ERROR(BadStrideError, data)
NF_DEFINE_ERROR(EmptyDatasetError, data)

// ingredient pipeline
NF_DEFINE_ERROR(VocabularyError, data)
NF_DEFINE_ERROR(UnmappableIngredientError, data)
NF_DEFINE_ERROR(RejectedTermError, data)
NF_DEFINE_ERROR(MissingPlaceholderError, config)
NF_DEFINE_ERROR(TurnRangeError, config)

// text embedding
NF_DEFINE_ERROR(EncoderUnavailableError, runtime)
NF_DEFINE_ERROR(EmptyIngredientListError, data)

// model
NF_DEFINE_ERROR(ShapeMismatchError, runtime)
NF_DEFINE_ERROR(DoubleFusionError, runtime)
NF_DEFINE_ERROR(ResolutionError, runtime)
NF_DEFINE_ERROR(UninitializedModelError, runtime)
NF_DEFINE_ERROR(LengthMismatchError, runtime)
NF_DEFINE_ERROR(ConfigMismatchError, config)

// training / evaluation
NF_DEFINE_ERROR(DivergenceError, runtime)
NF_DEFINE_ERROR(ZeroMeanError, data)

// augmented inference
NF_DEFINE_ERROR(IndexError, runtime)
NF_DEFINE_ERROR(ClientError, runtime)
NF_DEFINE_ERROR(ParseError, runtime)

// generic
NF_DEFINE_ERROR(PreconditionError, runtime)
NF_DEFINE_ERROR(IoError, data)
NF_DEFINE_ERROR(ConfigError, config)

#undef NF_DEFINE_ERROR

}  // namespace nf
