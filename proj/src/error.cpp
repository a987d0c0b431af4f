#include "mmp/error.hpp"

namespace mmp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorCode::InvalidKeyRequest: return "InvalidKeyRequest";
    case ErrorCode::MoodOutOfRange: return "MoodOutOfRange";
    case ErrorCode::InvalidHeader: return "InvalidHeader";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::SelfParent: return "SelfParent";
    case ErrorCode::LineageCycle: return "LineageCycle";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::ObserveConflict: return "ObserveConflict";
    case ErrorCode::NotAdmitted: return "NotAdmitted";
    case ErrorCode::MalformedCMB: return "MalformedCMB";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::MalformedEntry: return "MalformedEntry";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::ScriptError: return "ScriptError";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace mmp
