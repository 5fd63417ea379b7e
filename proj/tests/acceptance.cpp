// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "dialog_forge/agent.hpp"
#include "dialog_forge/backends.hpp"
#include "dialog_forge/bench.hpp"
#include "dialog_forge/dataset.hpp"
#include "dialog_forge/dialog.hpp"
#include "dialog_forge/error.hpp"
#include "dialog_forge/eval.hpp"
#include "dialog_forge/filter.hpp"
#include "dialog_forge/orchestrator.hpp"

namespace fs = std::filesystem;
namespace df = dialog_forge;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

fs::path fixture(const std::string& rel) { return fs::path(DF_FIXTURE_DIR) / rel; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "dfaccept-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

Outcome from_section(const df::bench::Section& section) {
  Outcome out{true, {}};
  std::vector<std::string> failed;
  for (const auto& c : section.checks) {
    if (!c.passed) {
      out.passed = false;
      failed.push_back(c.name + ": " + c.detail);
    }
  }
  if (section.checks.empty()) return {false, "no checks ran"};
  if (out.passed) {
    out.detail = fmt::format("{} checks, {:.1f}s", section.checks.size(), section.seconds);
    if (section.checks.size() <= 3) {
      std::vector<std::string> details;
      for (const auto& c : section.checks) {
        if (!c.detail.empty()) details.push_back(c.detail);
      }
      out.detail = fmt::format("{}", fmt::join(details, "; "));
    }
  } else {
    out.detail = fmt::format("{}", fmt::join(failed, "; "));
  }
  return out;
}

json synthetic_doc(int games, int concurrency) {
  return json{{"run_id", "acceptance"},
              {"seed", 29},
              {"max_turns", 3},
              {"concurrency", concurrency},
              {"corpus", {{"world", {{"seed", 8}, {"n_images", 400}}}}},
              {"grouping", {{"strategy", "random"}, {"n", 4}, {"games", games}}},
              {"agents",
               {{"describer", {{"kind", "synthetic"}, {"noise", 0.1}}},
                {"guesser", {{"kind", "synthetic"}, {"noise", 0.1}}}}},
              {"fixed_clock", "2024-01-01T00:00:00Z"}};
}

void run_through(const df::RunConfig& config, const fs::path& dir, df::Stage last) {
  for (df::Stage s : df::kStages) {
    df::run_stage(config, dir, s);
    if (s == last) break;
  }
}

Outcome dataset_arithmetic() {
  TempDir dir;
  run_through(df::RunConfig{synthetic_doc(600, 4), "."}, dir / "run", df::Stage::Filter);
  std::vector<df::DialogRecord> retained;
  for (const auto& line : lines_of(dir / "run/retained.jsonl")) retained.push_back(df::dialog_from_json(line));
  std::map<std::string, df::ValidationReport> by_game;
  for (const auto& line : lines_of(dir / "run/reports.jsonl")) {
    auto r = df::report_from_json(line);
    by_game.emplace(r.game_id, std::move(r));
  }
  std::vector<df::ValidationReport> reports;
  std::size_t sum_k = 0;
  for (const auto& d : retained) {
    reports.push_back(by_game.at(d.spec.game_id));
    sum_k += d.turns.size();
  }
  if (retained.empty()) return {false, "no dialogs retained"};

  const auto full = df::build_sft_dataset(retained, reports, df::DatasetMode::Full);
  const auto answers = df::build_sft_dataset(retained, reports, df::DatasetMode::AnswersOnly);
  auto count = [](const std::map<std::string, std::size_t>& m, const char* key) {
    const auto it = m.find(key);
    return it == m.end() ? std::size_t{0} : it->second;
  };
  const auto describer = count(full.counts.before_dedup, "describer");
  const auto guesser = count(full.counts.before_dedup, "guesser");
  const auto answers_guesser = count(answers.counts.before_dedup, "guesser") + count(answers.counts.per_variant, "guesser");
  const bool ok = describer == sum_k && guesser == sum_k + retained.size() && answers_guesser == 0 &&
                  count(answers.counts.before_dedup, "describer") == sum_k &&
                  df::parse_dataset_mode("answers_only") == df::DatasetMode::AnswersOnly;
  return {ok, fmt::format("{} retained, sum k = {}: describer {} (want {}), guesser {} (want {}), answers_only guesser {}",
                          retained.size(), sum_k, describer, sum_k, guesser, sum_k + retained.size(), answers_guesser)};
}

Outcome metric_fixtures() {
  std::vector<std::string> problems;
  std::vector<df::ValidationReport> reports(1000);
  for (int i = 0; i < 184; ++i) reports[static_cast<std::size_t>(i)].passed = true;
  const auto game = df::game_success_rate(reports);
  const auto game_text = df::format_percent(game.percent());
  if (game_text != "18.4%" || game.games_succeeded != 184 || game.games_total != 1000) {
    problems.push_back("game success " + game_text);
  }

  const auto episodes = df::read_episodes(fixture("eval/episodes.jsonl"));
  std::map<std::string, std::vector<std::string>> script;
  std::vector<df::ImageRecord> frames;
  std::size_t hand_scored = 0;
  const auto lines = lines_of(fixture("eval/episodes.jsonl"));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = json::parse(lines[i]);
    script[fmt::format("episode-{:06d}", i)] = {j.at("reply").get<std::string>()};
    hand_scored += j.at("correct").get<bool>();
    df::ImageRecord r;
    r.image_id = episodes.at(i).final_frame_id;
    r.content_ref = r.image_id + ".png";
    frames.push_back(r);
  }
  const df::AgentEndpoint agent("scripted", std::make_shared<df::ScriptedBackend>(script));
  const auto success = df::success_detection_eval(episodes, df::Corpus("episodes", frames), agent);
  const auto success_text = df::format_percent(success.stats.accuracy());
  if (episodes.size() != 200 || hand_scored != 113 || success.stats.correct != 113 || success_text != "56.5%") {
    problems.push_back(fmt::format("success detection {} ({} of {})", success_text, success.stats.correct,
                                   success.stats.total));
  }

  const auto one = df::normalize_count("one");
  const auto none = df::normalize_count("none");
  if (one != 1L) problems.push_back("normalize_count(one)");
  if (none != 0L) problems.push_back("normalize_count(none)");
  const auto cat = df::normalize_yes_no("There is no cat");
  if (cat != df::YesNo::No) problems.push_back("normalize_yes_no(There is no cat)");

  if (!problems.empty()) return {false, fmt::format("{}", fmt::join(problems, "; "))};
  return {true, fmt::format("game success {}, success detection {}, one -> 1, none -> 0, \"There is no cat\" -> No",
                            game_text, success_text)};
}

/// Every artifact the ledger lists, compared byte for byte.
bool same_artifacts(const fs::path& a, const fs::path& b, std::size_t& compared) {
  const auto ledger = df::RunLedger::load(a);
  if (!ledger) return false;
  for (const auto& [stage, rec] : ledger->stages) {
    for (const auto& [rel, hash] : rec.artifacts) {
      if (!fs::exists(b / rel) || slurp(a / rel) != slurp(b / rel)) return false;
      ++compared;
    }
  }
  return slurp(a / "ledger.json") == slurp(b / "ledger.json");
}

Outcome determinism_and_resume() {
  TempDir dir;
  std::vector<std::string> problems;
  std::size_t compared = 0;

  // Synthetic agents at concurrency 4.
  const df::RunConfig synthetic{synthetic_doc(300, 4), "."};
  run_through(synthetic, dir / "syn-a", df::Stage::EvalGame);
  run_through(synthetic, dir / "syn-b", df::Stage::EvalGame);
  if (!same_artifacts(dir / "syn-a", dir / "syn-b", compared)) problems.push_back("synthetic runs differ");

  // Scripted agents replaying fixed replies.
  {
    std::ofstream(dir / "guesser.json") << json::array({"Question: Is the object red?",
                                                        "Answer: I know the answer, it is image 2.",
                                                        "Question: Are there three objects?",
                                                        "Answer: I know the answer, it is image 1."})
                                               .dump();
    std::ofstream(dir / "describer.json") << json::array({"Yes.", "No, there is a blue square."}).dump();
  }
  auto doc = synthetic_doc(40, 1);
  doc["agents"] = {{"describer", {{"kind", "scripted"}, {"script", "describer.json"}}},
                   {"guesser", {{"kind", "scripted"}, {"script", "guesser.json"}}}};
  doc["game"] = {{"allow_guess_on_empty_summary", true}};
  const df::RunConfig scripted{doc, dir / ""};
  run_through(scripted, dir / "scr-a", df::Stage::EvalGame);
  run_through(scripted, dir / "scr-b", df::Stage::EvalGame);
  if (!same_artifacts(dir / "scr-a", dir / "scr-b", compared)) problems.push_back("scripted runs differ");

  // Interrupt generate at several points, with a torn trailing line, then resume.
  const df::RunConfig resumable{synthetic_doc(1000, 4), "."};
  df::run_stage(resumable, dir / "whole", df::Stage::Generate);
  const auto expected = slurp(dir / "whole/dialogs.jsonl");
  for (std::size_t cut : {std::size_t{1}, std::size_t{137}, std::size_t{600}, std::size_t{999}}) {
    const auto run = dir / fmt::format("cut-{}", cut);
    df::StageControl control;
    control.max_new_items = cut;
    df::run_stage(resumable, run, df::Stage::Generate, control);
    std::ofstream(run / "dialogs.jsonl", std::ios::app | std::ios::binary) << R"({"spec":{"game_id":"torn)";
    df::run_stage(resumable, run, df::Stage::Generate);
    if (slurp(run / "dialogs.jsonl") != expected) problems.push_back(fmt::format("resume after {} differs", cut));
  }
  // Two interruptions in one run.
  {
    const auto run = dir / "cut-twice";
    df::StageControl control;
    control.max_new_items = 250;
    df::run_stage(resumable, run, df::Stage::Generate, control);
    df::run_stage(resumable, run, df::Stage::Generate, control);
    df::run_stage(resumable, run, df::Stage::Generate);
    if (slurp(run / "dialogs.jsonl") != expected) problems.push_back("resume after 250 + 250 differs");
  }

  if (!problems.empty()) return {false, fmt::format("{}", fmt::join(problems, "; "))};
  return {true, fmt::format("{} artifacts byte-identical across repeated runs; 5 interrupted generates resume to the "
                            "uninterrupted dialogs.jsonl",
                            compared)};
}

Outcome parser_goldens() {
  const auto doc = json::parse(slurp(fixture("parser_goldens.json")));
  std::size_t cases = 0;
  std::vector<std::string> failures;
  auto fail = [&](const std::string& raw) { failures.push_back(json(raw).dump()); };

  for (const auto& c : doc.at("guesser")) {
    ++cases;
    const auto raw = c.at("raw").get<std::string>();
    try {
      const auto action = df::parse_guesser_output(raw, c.at("n").get<int>());
      const bool ok = c.contains("guess")
                          ? std::holds_alternative<df::Guess>(action) &&
                                std::get<df::Guess>(action).index == c["guess"].get<int>()
                          : std::holds_alternative<df::Question>(action) &&
                                std::get<df::Question>(action).text == c["question"].get<std::string>();
      if (!ok) fail(raw);
    } catch (const std::exception&) {
      fail(raw);
    }
  }
  for (const auto& c : doc.at("guesser_errors")) {
    ++cases;
    const auto raw = c.at("raw").get<std::string>();
    try {
      df::parse_guesser_output(raw, c.at("n").get<int>());
      fail(raw);
    } catch (const df::Error& e) {
      if (df::to_string(e.kind()) != c.at("error").get<std::string>()) fail(raw);
    }
  }
  for (const auto& c : doc.at("qa_pairs")) {
    ++cases;
    const auto line = c.at("line").get<std::string>();
    const auto pair = df::parse_qa_pair(line);
    if (!pair || pair->question != c.at("question").get<std::string>() ||
        pair->answer != c.at("answer").get<std::string>()) {
      fail(line);
    }
  }
  for (const auto& c : doc.at("self_qa_questions")) {
    ++cases;
    const auto raw = c.at("raw").get<std::string>();
    const auto q = df::parse_self_qa_question(raw);
    const bool ok = c.at("question").is_null() ? !q : q && *q == c["question"].get<std::string>();
    if (!ok) fail(raw);
  }
  for (const auto& c : doc.at("describer")) {
    ++cases;
    const auto raw = c.at("raw").get<std::string>();
    try {
      if (df::parse_describer_output(raw) != c.at("answer").get<std::string>()) fail(raw);
    } catch (const std::exception&) {
      fail(raw);
    }
  }
  if (!failures.empty()) {
    return {false, fmt::format("{} of {} failed: {}", failures.size(), cases, fmt::join(failures, ", "))};
  }
  return {true, fmt::format("{} golden strings, 0 failures", cases)};
}

}  // namespace

int main() {
  df::bench::BenchOptions bench;
  bench.concurrency = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"chance-rate", [&] { return from_section(df::bench::chance_rate(bench)); }},
      {"filter-soundness", [&] { return from_section(df::bench::filter_soundness(bench)); }},
      {"difficulty-trend", [&] { return from_section(df::bench::difficulty_trend(bench)); }},
      {"grouping-trend", [&] { return from_section(df::bench::grouping_trend(bench)); }},
      {"oracle-completeness", [&] { return from_section(df::bench::oracle_completeness(bench)); }},
      {"exact-vs-simulated", [&] { return from_section(df::bench::exact_vs_simulated(bench)); }},
      {"dataset-arithmetic", dataset_arithmetic},
      {"metric-fixtures", metric_fixtures},
      {"determinism-and-resume", determinism_and_resume},
      {"parser-goldens", parser_goldens},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    Outcome outcome;
    try {
      outcome = c.check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    failed += !outcome.passed;
    std::cout << fmt::format("{} {}: {}\n", outcome.passed ? "PASS" : "FAIL", c.name, outcome.detail) << std::flush;
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
