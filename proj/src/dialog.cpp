#include "dialog_forge/dialog.hpp"

#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/error.hpp"

namespace dialog_forge {

using ordered_json = nlohmann::ordered_json;

void GameSpec::validate() const {
  if (image_ids.empty()) throw Error(ErrorKind::InvalidSpec, game_id + ": game needs at least one image");
  if (std::set<std::string>(image_ids.begin(), image_ids.end()).size() != image_ids.size()) {
    throw Error(ErrorKind::InvalidSpec, game_id + ": image ids must be distinct");
  }
  if (target_index < 1 || static_cast<std::size_t>(target_index) > image_ids.size()) {
    throw Error(ErrorKind::InvalidSpec, fmt::format("{}: target_index {} outside [1, {}]", game_id,
                                                    target_index, image_ids.size()));
  }
  if (max_turns < 1) throw Error(ErrorKind::InvalidSpec, game_id + ": max_turns must be positive");
}

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::Success: return "success";
    case Outcome::Failure: return "failure";
    case Outcome::Aborted: return "aborted";
  }
  return "";
}

std::string_view to_string(AbortReason reason) noexcept {
  switch (reason) {
    case AbortReason::TurnBudgetExhausted: return "turn_budget_exhausted";
    case AbortReason::ParseFailure: return "parse_failure";
    case AbortReason::BackendFailure: return "backend_failure";
  }
  return "";
}

const std::string& DialogRecord::final_summary() const {
  static const std::string kEmpty;
  return turns.empty() ? kEmpty : turns.back().summary_after;
}

namespace {

nlohmann::json parse_object(std::string_view line, const char* what) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorKind::ParseError, fmt::format("{} line is not a JSON object", what));
  }
  return j;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const char* what) {
  if (!j.contains(key)) throw Error(ErrorKind::ParseError, fmt::format("{} missing `{}`", what, key));
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::ParseError, fmt::format("{} field `{}` has the wrong type", what, key));
  }
}

void write_spec_fields(ordered_json& j, const GameSpec& spec) {
  j["game_id"] = spec.game_id;
  j["corpus_id"] = spec.corpus_id;
  j["image_ids"] = spec.image_ids;
  j["target_index"] = spec.target_index;
}

GameSpec read_spec_fields(const nlohmann::json& j, const char* what) {
  GameSpec spec;
  spec.game_id = field<std::string>(j, "game_id", what);
  spec.corpus_id = j.value("corpus_id", std::string());
  spec.image_ids = field<std::vector<std::string>>(j, "image_ids", what);
  spec.target_index = field<int>(j, "target_index", what);
  spec.max_turns = j.value("max_turns", 3);
  spec.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("task_label") && j["task_label"].is_string()) spec.task_label = j["task_label"].get<std::string>();
  return spec;
}

}  // namespace

std::string to_jsonl(const GameSpec& spec) {
  ordered_json j;
  write_spec_fields(j, spec);
  j["max_turns"] = spec.max_turns;
  j["seed"] = spec.seed;
  if (spec.task_label) j["task_label"] = *spec.task_label;
  return j.dump();
}

GameSpec game_spec_from_json(std::string_view line) {
  return read_spec_fields(parse_object(line, "game spec"), "game spec");
}

std::string to_jsonl(const DialogRecord& d) {
  ordered_json j;
  write_spec_fields(j, d.spec);
  ordered_json turns = ordered_json::array();
  for (const auto& t : d.turns) {
    turns.push_back(ordered_json{{"q", t.question},
                                 {"a", t.answer},
                                 {"summary_after", t.summary_after},
                                 {"raw_guesser", t.raw_guesser_output},
                                 {"raw_describer", t.raw_describer_output}});
  }
  j["turns"] = std::move(turns);
  j["final_guess"] = d.final_action ? ordered_json(d.final_action->index) : ordered_json(nullptr);
  j["outcome"] = to_string(d.outcome);
  if (d.aborted_reason) {
    j["aborted_reason"] = to_string(*d.aborted_reason);
    if (!d.abort_detail.empty()) j["abort_detail"] = d.abort_detail;
  }
  j["seed"] = d.spec.seed;
  j["endpoints"] = ordered_json{{"describer", d.describer_endpoint}, {"guesser", d.guesser_endpoint}};
  j["created_at"] = d.created_at;
  j["max_turns"] = d.spec.max_turns;
  if (d.spec.task_label) j["task_label"] = *d.spec.task_label;
  return j.dump();
}

DialogRecord dialog_from_json(std::string_view line) {
  const auto j = parse_object(line, "dialog");
  DialogRecord d;
  d.spec = read_spec_fields(j, "dialog");
  for (const auto& t : field<nlohmann::json>(j, "turns", "dialog")) {
    Turn turn;
    turn.question = t.value("q", std::string());
    turn.answer = t.value("a", std::string());
    turn.summary_after = t.value("summary_after", std::string());
    turn.raw_guesser_output = t.value("raw_guesser", std::string());
    turn.raw_describer_output = t.value("raw_describer", std::string());
    d.turns.push_back(std::move(turn));
  }
  if (j.contains("final_guess") && j["final_guess"].is_number_integer()) {
    d.final_action = Guess{j["final_guess"].get<int>()};
  }
  const auto outcome = field<std::string>(j, "outcome", "dialog");
  if (outcome == "success") {
    d.outcome = Outcome::Success;
  } else if (outcome == "failure") {
    d.outcome = Outcome::Failure;
  } else if (outcome == "aborted") {
    d.outcome = Outcome::Aborted;
  } else {
    throw Error(ErrorKind::ParseError, "unknown outcome `" + outcome + "`");
  }
  if (j.contains("aborted_reason")) {
    const auto reason = j["aborted_reason"].get<std::string>();
    for (auto r : {AbortReason::TurnBudgetExhausted, AbortReason::ParseFailure, AbortReason::BackendFailure}) {
      if (to_string(r) == reason) d.aborted_reason = r;
    }
    if (!d.aborted_reason) throw Error(ErrorKind::ParseError, "unknown aborted_reason `" + reason + "`");
    d.abort_detail = j.value("abort_detail", std::string());
  }
  if (j.contains("endpoints") && j["endpoints"].is_object()) {
    d.describer_endpoint = j["endpoints"].value("describer", std::string());
    d.guesser_endpoint = j["endpoints"].value("guesser", std::string());
  }
  d.created_at = j.value("created_at", std::string());
  return d;
}

}  // namespace dialog_forge
