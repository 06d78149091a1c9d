#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace probefuse {

enum class ErrorKind {
  // input validation
  Validation,
  UnalignedSentence,
  UnknownSpeaker,
  // feature packs
  Io,
  BadMagic,
  VersionMismatch,
  RowCountMismatch,
  DimensionMismatch,
  NonFinite,
  DuplicateId,
  MissingSample,
  IdMismatch,
  DuplicateModel,
  // learning / evaluation
  SingleClass,
  LengthMismatch,
  EmptyGrid,
  Heterogeneous,
  Numerical,
  // pipeline
  MissingArtifact,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace probefuse
