#include "dialog_forge/eval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/error.hpp"
#include "dialog_forge/parallel.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge {

using ordered_json = nlohmann::ordered_json;

std::optional<double> percent(std::size_t num, std::size_t den) noexcept {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> GameSuccessStats::percent() const noexcept {
  return dialog_forge::percent(games_succeeded, games_total);
}

GameSuccessStats game_success_rate(std::span<const ValidationReport> reports) {
  GameSuccessStats s;
  s.games_total = reports.size();
  s.games_succeeded = static_cast<std::size_t>(
      std::count_if(reports.begin(), reports.end(), [](const ValidationReport& r) { return r.passed; }));
  s.rate = s.games_total == 0 ? 0.0 : static_cast<double>(s.games_succeeded) / static_cast<double>(s.games_total);
  return s;
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

/// Lowercase, typographic apostrophes folded to ', other punctuation to
/// spaces, whitespace collapsed, padded with one space on each side so that
/// " cue " finds whole-word matches.
std::string fold(std::string_view raw) {
  std::string s;
  s.reserve(raw.size() + 2);
  s += ' ';
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(raw[i]);
    // U+2019 RIGHT SINGLE QUOTATION MARK
    if (c == 0xE2 && i + 2 < raw.size() && static_cast<unsigned char>(raw[i + 1]) == 0x80 &&
        static_cast<unsigned char>(raw[i + 2]) == 0x99) {
      s += '\'';
      i += 2;
      continue;
    }
    char out = ' ';
    if (std::isalnum(c) || c == '\'') out = static_cast<char>(std::tolower(c));
    if (out == ' ' && s.back() == ' ') continue;
    s += out;
  }
  if (s.back() != ' ') s += ' ';
  return s;
}

bool contains_phrase(const std::string& folded, std::string_view phrase) {
  const std::string needle = fold(phrase);
  return needle.size() > 2 && folded.find(needle) != std::string::npos;
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j[key].is_array()) throw Error(ErrorKind::ParseError, fmt::format("lexicon `{}` must be an array", key));
  return j[key].get<std::vector<std::string>>();
}

constexpr std::string_view kNumberWords[] = {
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};

}  // namespace

std::string_view to_string(YesNo v) noexcept {
  switch (v) {
    case YesNo::Yes: return "yes";
    case YesNo::No: return "no";
    case YesNo::Other: return "other";
  }
  return "other";
}

const YesNoLexicon& YesNoLexicon::defaults() {
  static const YesNoLexicon lexicon{
      {"yes"},
      {"no"},
      {"there is no", "there are no", "not", "none", "isn't", "aren't", "doesn't", "don't", "cannot", "can't"},
      {"there is a", "there is an", "there are", "it is"},
  };
  return lexicon;
}

YesNoLexicon YesNoLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read lexicon " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ParseError, "lexicon must be a JSON object");
  return YesNoLexicon{string_list(j, "leading_yes"), string_list(j, "leading_no"), string_list(j, "negation_cues"),
                      string_list(j, "affirmative_cues")};
}

YesNo normalize_yes_no(std::string_view text, const YesNoLexicon& lexicon) {
  const std::string folded = fold(text);
  const auto first_end = folded.find(' ', 1);
  const std::string_view first =
      first_end == std::string::npos ? std::string_view{} : std::string_view(folded).substr(1, first_end - 1);
  for (const auto& w : lexicon.leading_yes) {
    if (first == w) return YesNo::Yes;
  }
  for (const auto& w : lexicon.leading_no) {
    if (first == w) return YesNo::No;
  }
  for (const auto& cue : lexicon.negation_cues) {
    if (contains_phrase(folded, cue)) return YesNo::No;
  }
  for (const auto& cue : lexicon.affirmative_cues) {
    if (contains_phrase(folded, cue)) return YesNo::Yes;
  }
  return YesNo::Other;
}

std::optional<long> normalize_count(std::string_view text) {
  const std::string folded = fold(text);
  std::size_t pos = 1;
  while (pos < folded.size()) {
    const auto end = folded.find(' ', pos);
    if (end == std::string::npos) break;
    const std::string_view token = std::string_view(folded).substr(pos, end - pos);
    pos = end + 1;
    if (token.empty()) continue;
    if (std::isdigit(static_cast<unsigned char>(token.front()))) {
      std::size_t digits = 0;
      while (digits < token.size() && std::isdigit(static_cast<unsigned char>(token[digits]))) ++digits;
      if (digits > 12) continue;
      return std::stol(std::string(token.substr(0, digits)));
    }
    if (token == "none" || token == "no") return 0;
    for (std::size_t i = 0; i < std::size(kNumberWords); ++i) {
      if (token == kNumberWords[i]) return static_cast<long>(i);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// VQA

std::string_view to_string(QuestionType t) noexcept {
  switch (t) {
    case QuestionType::YesNo: return "yes_no";
    case QuestionType::Counting: return "counting";
    case QuestionType::SuccessDetection: return "success_detection";
  }
  return "yes_no";
}

std::optional<QuestionType> parse_question_type(std::string_view name) noexcept {
  for (auto t : {QuestionType::YesNo, QuestionType::Counting, QuestionType::SuccessDetection}) {
    if (name == to_string(t)) return t;
  }
  return std::nullopt;
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorKind::ParseError, fmt::format("{}:{}: not a JSON object", path.string(), line_no));
    }
    try {
      out.push_back(parse(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

YesNo parse_gold(const std::string& gold) {
  const auto v = normalize_yes_no(gold);
  if (v == YesNo::Other) throw Error(ErrorKind::ParseError, "gold must be yes or no, got `" + gold + "`");
  return v;
}

struct Judged {
  YesNo label = YesNo::Other;
  std::optional<std::string> judge_label;
  bool disagreement = false;
};

Judged judge_yes_no(const std::string& question, const std::string& prediction, const YesNoLexicon& lexicon,
                    const EvalOptions& options, const InvocationContext& ctx) {
  Judged out;
  out.label = normalize_yes_no(prediction, lexicon);
  if (options.judge_mode == JudgeMode::Agent) {
    const auto payload = render_prompt(Role::YesNoJudge, {{"question", question}, {"answer", prediction}}, {},
                                       options.sampling);
    const auto verdict = normalize_yes_no(options.judge->invoke(payload, ctx), lexicon);
    out.judge_label = std::string(to_string(verdict));
    out.disagreement = verdict != out.label;
    out.label = verdict;
  }
  return out;
}

void check_judge(const EvalOptions& options) {
  if (options.judge_mode == JudgeMode::Agent && !options.judge) {
    throw Error(ErrorKind::InvalidConfig, "judge mode `agent` needs a judge endpoint");
  }
}

void tally(TypeStats& s, const ItemResult& r) {
  ++s.total;
  if (r.scored) {
    ++s.scored;
  } else {
    ++s.unscored;
  }
  if (r.correct) ++s.correct;
}

}  // namespace

std::vector<VqaItem> read_vqa_items(const std::filesystem::path& path) {
  return read_jsonl<VqaItem>(path, [](const nlohmann::json& j) {
    VqaItem item;
    item.image_id = j.at("image_id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
    const auto type = parse_question_type(j.at("type").get<std::string>());
    if (!type) throw Error(ErrorKind::ParseError, "unknown question type");
    item.type = *type;
    if (item.gold_answers.empty()) throw Error(ErrorKind::ParseError, "gold_answers is empty");
    return item;
  });
}

VqaReport score_vqa(std::span<const VqaItem> items, const Corpus& corpus, const AgentEndpoint& agent,
                    const EvalOptions& options) {
  check_judge(options);
  const YesNoLexicon& lexicon = options.lexicon ? *options.lexicon : YesNoLexicon::defaults();
  VqaReport report;
  report.items.resize(items.size());
  std::vector<char> disagreed(items.size(), 0);
  parallel_for(items.size(), options.concurrency, [&](std::size_t i) {
    const VqaItem& item = items[i];
    ItemResult& r = report.items[i];
    r.item_id = fmt::format("vqa-{:06d}", i);
    r.question = item.question;
    r.type = item.type;
    const InvocationContext ctx{r.item_id, derive_seed(options.seed, r.item_id), 0};
    try {
      const auto payload = render_prompt(Role::Describer, {{"question", item.question}},
                                         {corpus.image_ref(item.image_id)}, options.sampling);
      r.prediction = agent.invoke(payload, ctx);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::EmptyResponse) {
        r.error = e.what();
        return;
      }
    }
    r.scored = true;
    const std::string answer = text::trim(r.prediction);
    if (item.type == QuestionType::Counting) {
      const auto predicted = normalize_count(answer);
      r.normalized = predicted ? std::to_string(*predicted) : "";
      r.correct = predicted && std::any_of(item.gold_answers.begin(), item.gold_answers.end(),
                                           [&](const std::string& g) { return normalize_count(g) == predicted; });
      return;
    }
    try {
      const auto judged = judge_yes_no(item.question, answer, lexicon, options, {ctx.game_id, ctx.seed, 1});
      r.normalized = std::string(to_string(judged.label));
      r.judge_label = judged.judge_label;
      disagreed[i] = judged.disagreement;
      r.correct = judged.label != YesNo::Other &&
                  std::any_of(item.gold_answers.begin(), item.gold_answers.end(),
                              [&](const std::string& g) { return normalize_yes_no(g, lexicon) == judged.label; });
    } catch (const Error& e) {
      r.scored = false;
      r.error = std::string("judge: ") + e.what();
    }
  });
  for (auto t : {QuestionType::YesNo, QuestionType::Counting}) report.per_type[std::string(to_string(t))];
  for (std::size_t i = 0; i < items.size(); ++i) {
    tally(report.per_type[std::string(to_string(items[i].type))], report.items[i]);
    report.judge_disagreements += static_cast<std::size_t>(disagreed[i]);
  }
  return report;
}

std::vector<Episode> read_episodes(const std::filesystem::path& path) {
  return read_jsonl<Episode>(path, [](const nlohmann::json& j) {
    return Episode{j.at("final_frame_id").get<std::string>(), j.at("task_label").get<std::string>(),
                   j.at("completion_question").get<std::string>(), parse_gold(j.at("gold").get<std::string>())};
  });
}

SuccessReport success_detection_eval(std::span<const Episode> episodes, const Corpus& corpus,
                                     const AgentEndpoint& agent, const EvalOptions& options) {
  check_judge(options);
  const YesNoLexicon& lexicon = options.lexicon ? *options.lexicon : YesNoLexicon::defaults();
  SuccessReport report;
  report.items.resize(episodes.size());
  parallel_for(episodes.size(), options.concurrency, [&](std::size_t i) {
    const Episode& ep = episodes[i];
    ItemResult& r = report.items[i];
    r.item_id = fmt::format("episode-{:06d}", i);
    r.question = ep.completion_question;
    r.type = QuestionType::SuccessDetection;
    const InvocationContext ctx{r.item_id, derive_seed(options.seed, r.item_id), 0};
    try {
      const auto payload =
          render_prompt(Role::SuccessDetection, {{"task", ep.task_label}, {"question", ep.completion_question}},
                        {corpus.image_ref(ep.final_frame_id)}, options.sampling);
      r.prediction = agent.invoke(payload, ctx);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::EmptyResponse) {
        r.error = e.what();
        return;
      }
    }
    try {
      const auto judged = judge_yes_no(ep.completion_question, text::trim(r.prediction), lexicon, options,
                                       {ctx.game_id, ctx.seed, 1});
      r.scored = true;
      r.normalized = std::string(to_string(judged.label));
      r.judge_label = judged.judge_label;
      r.correct = judged.label == ep.gold;
    } catch (const Error& e) {
      r.error = std::string("judge: ") + e.what();
    }
  });
  for (auto gold : {"yes", "no"}) {
    for (auto pred : {"yes", "no", "other", "unscored"}) report.confusion[gold][pred] = 0;
  }
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& r = report.items[i];
    tally(report.stats, r);
    ++report.confusion[std::string(to_string(episodes[i].gold))][r.scored ? r.normalized : "unscored"];
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

ordered_json percent_json(std::optional<double> p) { return p ? ordered_json(*p) : ordered_json(nullptr); }

ordered_json stats_json(const TypeStats& s) {
  return ordered_json{{"total", s.total},       {"scored", s.scored},
                      {"unscored", s.unscored}, {"correct", s.correct},
                      {"accuracy", percent_json(s.accuracy())}, {"empty", s.total == 0}};
}

ordered_json item_json(const ItemResult& r) {
  ordered_json j{{"item_id", r.item_id},        {"question", r.question}, {"type", to_string(r.type)},
                 {"prediction", r.prediction}, {"normalized", r.normalized}};
  if (r.judge_label) j["judge_label"] = *r.judge_label;
  j["scored"] = r.scored;
  j["correct"] = r.correct;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

}  // namespace

std::string to_json(const GameSuccessStats& s) {
  ordered_json j{{"games_total", s.games_total},
                 {"games_succeeded", s.games_succeeded},
                 {"rate", s.rate},
                 {"percent", percent_json(s.percent())}};
  return j.dump(2);
}

std::string to_json(const VqaReport& report) {
  ordered_json per_type;
  for (const auto& [name, s] : report.per_type) per_type[name] = stats_json(s);
  ordered_json items = ordered_json::array();
  for (const auto& r : report.items) items.push_back(item_json(r));
  ordered_json j{{"per_type", std::move(per_type)},
                 {"judge_disagreements", report.judge_disagreements},
                 {"items", std::move(items)}};
  return j.dump(2);
}

std::string to_json(const SuccessReport& report) {
  ordered_json items = ordered_json::array();
  for (const auto& r : report.items) items.push_back(item_json(r));
  ordered_json confusion;
  for (const auto& [gold, row] : report.confusion) {
    ordered_json jr;
    for (const auto& [pred, n] : row) jr[pred] = n;
    confusion[gold] = std::move(jr);
  }
  ordered_json j{{"stats", stats_json(report.stats)}, {"confusion", std::move(confusion)}, {"items", std::move(items)}};
  return j.dump(2);
}

std::string format_percent(std::optional<double> value) {
  if (!value) return "n/a";
  std::string s = fmt::format("{:.2f}", *value);
  if (s.back() == '0') s.pop_back();
  return s + "%";
}

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      out += c == 0 ? fmt::format("{:<{}}", cell, width[c]) : fmt::format(" | {:>{}}", cell, width[c]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t c = 0; c < width.size(); ++c) rule += (c == 0 ? "" : "-+-") + std::string(width[c], '-');
  out += rule + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

std::string render_table(const GameSuccessStats& s) {
  return render_table({"Games", "Succeeded", "Game success"},
                      {{std::to_string(s.games_total), std::to_string(s.games_succeeded), format_percent(s.percent())}});
}

std::string render_table(const VqaReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [name, s] : report.per_type) {
    rows.push_back({name, std::to_string(s.total), std::to_string(s.correct), std::to_string(s.unscored),
                    format_percent(s.accuracy())});
  }
  return render_table({"Type", "Items", "Correct", "Unscored", "Accuracy"}, rows);
}

std::string render_table(const SuccessReport& report) {
  const auto& s = report.stats;
  std::string out = render_table({"Episodes", "Correct", "Unscored", "Success detection"},
                                 {{std::to_string(s.total), std::to_string(s.correct), std::to_string(s.unscored),
                                   format_percent(s.accuracy())}});
  std::vector<std::vector<std::string>> rows;
  for (const auto& [gold, row] : report.confusion) {
    std::vector<std::string> cells{"gold " + gold};
    for (const auto& [pred, n] : row) cells.push_back(std::to_string(n));
    rows.push_back(std::move(cells));
  }
  return out + "\n" + render_table({"", "pred no", "pred other", "unscored", "pred yes"}, rows);
}

}  // namespace dialog_forge
