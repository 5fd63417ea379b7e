#include "dialog_forge/error.hpp"

namespace dialog_forge {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingBinding: return "MissingBinding";
    case ErrorKind::SlotMismatch: return "SlotMismatch";
    case ErrorKind::Unparseable: return "Unparseable";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorKind::RemoteRejected: return "RemoteRejected";
    case ErrorKind::EmptyResponse: return "EmptyResponse";
    case ErrorKind::ScriptExhausted: return "ScriptExhausted";
    case ErrorKind::InvalidPayload: return "InvalidPayload";
    case ErrorKind::CorpusMiss: return "CorpusMiss";
    case ErrorKind::NotSuccessful: return "NotSuccessful";
    case ErrorKind::ReplayFailed: return "ReplayFailed";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::DanglingContentRef: return "DanglingContentRef";
    case ErrorKind::InsufficientCluster: return "InsufficientCluster";
    case ErrorKind::InsufficientCorpus: return "InsufficientCorpus";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::InsufficientFrames: return "InsufficientFrames";
    case ErrorKind::NotRetained: return "NotRetained";
    case ErrorKind::MissingLabel: return "MissingLabel";
    case ErrorKind::DomainExhausted: return "DomainExhausted";
    case ErrorKind::UnrecognizedQuestion: return "UnrecognizedQuestion";
    case ErrorKind::TreeTooLarge: return "TreeTooLarge";
    case ErrorKind::DependencyUnmet: return "DependencyUnmet";
    case ErrorKind::ConfigDrift: return "ConfigDrift";
    case ErrorKind::HookFailed: return "HookFailed";
    case ErrorKind::ArtifactMismatch: return "ArtifactMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace dialog_forge
