#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/filter.hpp"

namespace dialog_forge {

/// Percentage num/den, or nullopt for an empty denominator.
std::optional<double> percent(std::size_t num, std::size_t den) noexcept;

struct GameSuccessStats {
  std::size_t games_total = 0;
  std::size_t games_succeeded = 0;  // passed every permutation
  double rate = 0.0;
  std::optional<double> percent() const noexcept;
};

GameSuccessStats game_success_rate(std::span<const ValidationReport> reports);

// ---------------------------------------------------------------------------
// Answer normalization

enum class YesNo { Yes, No, Other };
std::string_view to_string(YesNo v) noexcept;

/// Cue phrases are matched on word boundaries after lowercasing and folding
/// punctuation to spaces (apostrophes are kept).
struct YesNoLexicon {
  std::vector<std::string> leading_yes;
  std::vector<std::string> leading_no;
  std::vector<std::string> negation_cues;
  std::vector<std::string> affirmative_cues;

  static const YesNoLexicon& defaults();
  /// JSON object with the four arrays above. Throws ParseError or Io.
  static YesNoLexicon load(const std::filesystem::path& path);
  friend bool operator==(const YesNoLexicon&, const YesNoLexicon&) = default;
};

/// Leading token decides; else any negation cue gives No; else any
/// affirmative cue gives Yes; else Other.
YesNo normalize_yes_no(std::string_view text, const YesNoLexicon& lexicon = YesNoLexicon::defaults());

/// First numeric mention: digits, or a number word zero..twenty, "none", "no".
std::optional<long> normalize_count(std::string_view text);

// ---------------------------------------------------------------------------
// VQA scoring

enum class QuestionType { YesNo, Counting, SuccessDetection };
std::string_view to_string(QuestionType t) noexcept;
std::optional<QuestionType> parse_question_type(std::string_view name) noexcept;

struct VqaItem {
  std::string image_id;
  std::string question;
  std::vector<std::string> gold_answers;
  QuestionType type = QuestionType::YesNo;
};

/// JSONL {image_id, question, gold_answers[], type}. Throws ParseError.
std::vector<VqaItem> read_vqa_items(const std::filesystem::path& path);

enum class JudgeMode { Rules, Agent };

struct EvalOptions {
  int concurrency = 1;
  SamplingParams sampling = SamplingParams::evaluation();
  JudgeMode judge_mode = JudgeMode::Rules;
  const AgentEndpoint* judge = nullptr;  // required for JudgeMode::Agent
  const YesNoLexicon* lexicon = nullptr;
  std::uint64_t seed = 0;
};

struct ItemResult {
  std::string item_id;
  std::string question;
  QuestionType type = QuestionType::YesNo;
  std::string prediction;  // raw model text
  std::string normalized;  // "yes"/"no"/"other", a count, or "" when none
  std::optional<std::string> judge_label;
  bool scored = false;
  bool correct = false;
  std::string error;
};

struct TypeStats {
  std::size_t total = 0;
  std::size_t scored = 0;
  std::size_t unscored = 0;
  std::size_t correct = 0;
  /// Unscored items count as incorrect; nullopt when total is 0.
  std::optional<double> accuracy() const noexcept { return percent(correct, total); }
};

struct VqaReport {
  std::map<std::string, TypeStats> per_type;  // keyed by type name
  std::vector<ItemResult> items;
  std::size_t judge_disagreements = 0;  // rules label != judge label
};

VqaReport score_vqa(std::span<const VqaItem> items, const Corpus& corpus, const AgentEndpoint& agent,
                    const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Success detection

struct Episode {
  std::string final_frame_id;
  std::string task_label;
  std::string completion_question;
  YesNo gold = YesNo::Yes;
};

/// JSONL {final_frame_id, task_label, completion_question, gold}. Throws ParseError.
std::vector<Episode> read_episodes(const std::filesystem::path& path);

struct SuccessReport {
  TypeStats stats;
  /// confusion[gold][predicted]; predicted is yes, no, other or unscored.
  std::map<std::string, std::map<std::string, std::size_t>> confusion;
  std::vector<ItemResult> items;
};

SuccessReport success_detection_eval(std::span<const Episode> episodes, const Corpus& corpus,
                                     const AgentEndpoint& agent, const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Reports

std::string to_json(const GameSuccessStats& stats);
std::string to_json(const VqaReport& report);
std::string to_json(const SuccessReport& report);

/// "18.4%" style; "n/a" for nullopt.
std::string format_percent(std::optional<double> value);
/// Plain aligned table with a header rule.
std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

std::string render_table(const GameSuccessStats& stats);
std::string render_table(const VqaReport& report);
std::string render_table(const SuccessReport& report);

}  // namespace dialog_forge
