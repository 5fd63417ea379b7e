#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dialog_forge {

enum class ErrorKind {
  // agent layer
  MissingBinding,
  SlotMismatch,
  Unparseable,
  IndexOutOfRange,
  RemoteUnavailable,
  RemoteRejected,
  EmptyResponse,
  ScriptExhausted,
  InvalidPayload,
  // game engine / filter
  CorpusMiss,
  NotSuccessful,
  ReplayFailed,
  InvalidSpec,
  // corpus
  ParseError,
  DuplicateId,
  DanglingContentRef,
  InsufficientCluster,
  InsufficientCorpus,
  MissingEmbedding,
  InsufficientFrames,
  // dataset
  NotRetained,
  MissingLabel,
  // synthetic world
  DomainExhausted,
  UnrecognizedQuestion,
  TreeTooLarge,
  // orchestrator
  DependencyUnmet,
  ConfigDrift,
  HookFailed,
  ArtifactMismatch,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dialog_forge
