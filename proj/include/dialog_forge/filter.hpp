#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialog_forge/dialog.hpp"
#include "dialog_forge/game.hpp"

namespace dialog_forge {

struct ValidationReport {
  std::string game_id;
  /// One ordering per target position, as 1-based positions into the
  /// original image list.
  std::vector<std::vector<int>> orderings;
  /// Image id picked under each ordering; nullopt when skipped.
  std::vector<std::optional<std::string>> guesses;
  bool passed = false;
  std::optional<std::string> reason;
  /// Target positions (1-based) whose replay missed or failed.
  std::vector<int> failure_positions;

  friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

/// Exactly N orderings; in the k-th the target sits at position k and the
/// distractors keep their relative order.
std::vector<std::vector<std::string>> permutations_for(const GameSpec& spec);
std::vector<std::vector<int>> permutation_positions(const GameSpec& spec);

/// Replays the final guess under every ordering, stopping at the first miss.
/// Non-successful dialogs yield passed=false, reason "not_successful" and no replays.
ValidationReport validate_dialog(const DialogRecord& dialog, const Corpus& corpus, const AgentEndpoint& guesser,
                                 const GameOptions& options = {});

struct FilterResult {
  std::vector<DialogRecord> retained;
  std::vector<ValidationReport> reports;
};

/// One report per input, in input order; retained keeps input order.
FilterResult filter_corpus(std::span<const DialogRecord> dialogs, const Corpus& corpus, const AgentEndpoint& guesser,
                           const GameOptions& options = {}, int concurrency = 1);

std::string to_jsonl(const ValidationReport& report);
ValidationReport report_from_json(std::string_view line);

}  // namespace dialog_forge
