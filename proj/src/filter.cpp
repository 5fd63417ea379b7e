#include "dialog_forge/filter.hpp"

#include <json.hpp>

#include "dialog_forge/error.hpp"
#include "dialog_forge/parallel.hpp"

namespace dialog_forge {

using ordered_json = nlohmann::ordered_json;

std::vector<std::vector<int>> permutation_positions(const GameSpec& spec) {
  const int n = static_cast<int>(spec.n());
  std::vector<int> distractors;
  for (int i = 1; i <= n; ++i) {
    if (i != spec.target_index) distractors.push_back(i);
  }
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::vector<int> order = distractors;
    order.insert(order.begin() + k, spec.target_index);
    out.push_back(std::move(order));
  }
  return out;
}

std::vector<std::vector<std::string>> permutations_for(const GameSpec& spec) {
  std::vector<std::vector<std::string>> out;
  for (const auto& positions : permutation_positions(spec)) {
    std::vector<std::string> ids;
    ids.reserve(positions.size());
    for (int p : positions) ids.push_back(spec.image_ids[static_cast<std::size_t>(p - 1)]);
    out.push_back(std::move(ids));
  }
  return out;
}

ValidationReport validate_dialog(const DialogRecord& dialog, const Corpus& corpus, const AgentEndpoint& guesser,
                                 const GameOptions& options) {
  ValidationReport report;
  report.game_id = dialog.spec.game_id;
  report.orderings = permutation_positions(dialog.spec);
  report.guesses.assign(report.orderings.size(), std::nullopt);
  if (!dialog.succeeded()) {
    report.reason = "not_successful";
    return report;
  }
  const auto orderings = permutations_for(dialog.spec);
  const std::string& target = dialog.spec.target_id();
  for (std::size_t k = 0; k < orderings.size(); ++k) {
    try {
      const auto result = replay_guess(dialog, orderings[k], corpus, guesser, options, static_cast<std::uint32_t>(k));
      report.guesses[k] = result.image_id;
      if (result.image_id != target) {
        report.reason = "target_missed";
        report.failure_positions.push_back(static_cast<int>(k) + 1);
        return report;
      }
    } catch (const Error& e) {
      report.reason = std::string("replay_failed: ") + e.what();
      report.failure_positions.push_back(static_cast<int>(k) + 1);
      return report;
    }
  }
  report.passed = true;
  return report;
}

FilterResult filter_corpus(std::span<const DialogRecord> dialogs, const Corpus& corpus, const AgentEndpoint& guesser,
                           const GameOptions& options, int concurrency) {
  FilterResult result;
  result.reports.resize(dialogs.size());
  parallel_for(dialogs.size(), concurrency, [&](std::size_t i) {
    result.reports[i] = validate_dialog(dialogs[i], corpus, guesser, options);
  });
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    if (result.reports[i].passed) result.retained.push_back(dialogs[i]);
  }
  return result;
}

std::string to_jsonl(const ValidationReport& r) {
  ordered_json j;
  j["game_id"] = r.game_id;
  j["orderings"] = r.orderings;
  ordered_json guesses = ordered_json::array();
  for (const auto& g : r.guesses) guesses.push_back(g ? ordered_json(*g) : ordered_json(nullptr));
  j["guesses"] = std::move(guesses);
  j["passed"] = r.passed;
  if (r.reason) j["reason"] = *r.reason;
  if (!r.failure_positions.empty()) j["failure_positions"] = r.failure_positions;
  return j.dump();
}

ValidationReport report_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ParseError, "report line is not a JSON object");
  ValidationReport r;
  try {
    r.game_id = j.at("game_id").get<std::string>();
    r.orderings = j.at("orderings").get<std::vector<std::vector<int>>>();
    for (const auto& g : j.at("guesses")) {
      r.guesses.push_back(g.is_string() ? std::optional<std::string>(g.get<std::string>()) : std::nullopt);
    }
    r.passed = j.at("passed").get<bool>();
    if (j.contains("reason")) r.reason = j["reason"].get<std::string>();
    if (j.contains("failure_positions")) r.failure_positions = j["failure_positions"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace dialog_forge
