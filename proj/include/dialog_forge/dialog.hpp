#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dialog_forge/agent.hpp"

namespace dialog_forge {

/// One configured game: the ordered images shown to the Guesser and which of
/// them the Describer holds.
struct GameSpec {
  std::string game_id;
  std::vector<std::string> image_ids;
  int target_index = 1;  // 1-based
  int max_turns = 3;
  std::string corpus_id;
  std::uint64_t seed = 0;
  std::optional<std::string> task_label;

  std::size_t n() const noexcept { return image_ids.size(); }
  const std::string& target_id() const { return image_ids.at(static_cast<std::size_t>(target_index - 1)); }

  /// Throws InvalidSpec naming the violated invariant.
  void validate() const;

  friend bool operator==(const GameSpec&, const GameSpec&) = default;
};

struct Turn {
  std::string question;
  std::string answer;
  std::string summary_after;
  std::string raw_guesser_output;
  std::string raw_describer_output;
  friend bool operator==(const Turn&, const Turn&) = default;
};

enum class Outcome { Success, Failure, Aborted };
enum class AbortReason { TurnBudgetExhausted, ParseFailure, BackendFailure };

std::string_view to_string(Outcome outcome) noexcept;
std::string_view to_string(AbortReason reason) noexcept;

struct DialogRecord {
  GameSpec spec;
  std::vector<Turn> turns;
  std::optional<Guess> final_action;
  Outcome outcome = Outcome::Aborted;
  std::optional<AbortReason> aborted_reason;
  std::string abort_detail;
  std::string describer_endpoint;
  std::string guesser_endpoint;
  std::string created_at;

  bool succeeded() const noexcept { return outcome == Outcome::Success; }
  /// Summary the Guesser held when it made (or would make) its final selection.
  const std::string& final_summary() const;

  friend bool operator==(const DialogRecord&, const DialogRecord&) = default;
};

// JSONL codecs. Encoders emit a fixed key order; decoders ignore unknown keys.
std::string to_jsonl(const GameSpec& spec);
GameSpec game_spec_from_json(std::string_view line);
std::string to_jsonl(const DialogRecord& dialog);
DialogRecord dialog_from_json(std::string_view line);

}  // namespace dialog_forge
