#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmp {

enum class ErrorCode {
  EmptyText,
  DegenerateEmbedding,
  InvalidKeyRequest,
  MoodOutOfRange,
  InvalidHeader,
  ZeroVector,
  DimensionMismatch,
  EmptyCandidates,
  AllWeightsZero,
  MissingField,
  InvalidProfile,
  DuplicateKey,
  SelfParent,
  LineageCycle,
  UnknownKey,
  ObserveConflict,
  NotAdmitted,
  MalformedCMB,
  StorageFailure,
  CorruptStore,
  MalformedFrame,
  SchemaViolation,
  MalformedEntry,
  InvalidConfig,
  BindFailure,
  ScriptError,
  TransportError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

// Every library failure surfaces as an Error carrying a stable code.
// `detail` names the offending field, key or record where one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string detail = {})
      : std::runtime_error(std::move(message)), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace mmp
