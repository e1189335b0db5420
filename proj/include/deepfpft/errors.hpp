#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepfpft {

// Every library error carries a short machine-readable kind, used by the CLI
// when it prints the error line on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DEEPFPFT_DEFINE_ERROR(Name)                                     \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

DEEPFPFT_DEFINE_ERROR(ConfigError)
DEEPFPFT_DEFINE_ERROR(IoError)
DEEPFPFT_DEFINE_ERROR(MissingArtifactError)
DEEPFPFT_DEFINE_ERROR(FactorizationError)
DEEPFPFT_DEFINE_ERROR(SingularMassError)
DEEPFPFT_DEFINE_ERROR(ShapeError)
DEEPFPFT_DEFINE_ERROR(GridMismatchError)
DEEPFPFT_DEFINE_ERROR(EmptyDataError)
DEEPFPFT_DEFINE_ERROR(LengthMismatchError)
DEEPFPFT_DEFINE_ERROR(InsufficientSamplesError)
DEEPFPFT_DEFINE_ERROR(ZeroNormError)
DEEPFPFT_DEFINE_ERROR(EmptySampleError)
DEEPFPFT_DEFINE_ERROR(WorkspaceLockedError)

#undef DEEPFPFT_DEFINE_ERROR

class NonFiniteStateError : public Error {
 public:
  NonFiniteStateError(std::size_t step, const std::string& message)
      : Error("NonFiniteStateError", message), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::size_t step, const std::string& message)
      : Error("NonFiniteLossError", message), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace deepfpft
