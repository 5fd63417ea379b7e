#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/eval.hpp"
#include "dialog_forge/rng.hpp"
#include "support.hpp"

namespace df = dialog_forge;
using namespace test_support;

namespace {

/// Fixture lines carry the scripted reply and the hand-scored flag next to the item.
struct Scored {
  std::vector<std::string> replies;
  std::vector<bool> correct;
};

Scored scored_lines(const std::string& rel) {
  Scored out;
  std::istringstream in(slurp(fixture(rel)));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.replies.push_back(j.at("reply").get<std::string>());
    out.correct.push_back(j.at("correct").get<bool>());
  }
  return out;
}

df::AgentEndpoint per_item(const std::string& prefix, const std::vector<std::string>& replies) {
  std::map<std::string, std::vector<std::string>> script;
  for (std::size_t i = 0; i < replies.size(); ++i) script[fmt::format("{}-{:06d}", prefix, i)] = {replies[i]};
  return endpoint(std::make_shared<df::ScriptedBackend>(script), "scripted");
}

df::ValidationReport report(bool passed) {
  df::ValidationReport r;
  r.passed = passed;
  return r;
}

df::Corpus frames_for(const std::vector<df::Episode>& episodes) {
  std::vector<df::ImageRecord> records;
  for (const auto& e : episodes) {
    df::ImageRecord r;
    r.image_id = e.final_frame_id;
    r.content_ref = e.final_frame_id + ".png";
    records.push_back(r);
  }
  return df::Corpus("episodes", records);
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("game success rate over reports") {
    std::vector<df::ValidationReport> reports;
    for (int i = 0; i < 1000; ++i) reports.push_back(report(i < 184));
    const auto s = df::game_success_rate(reports);
    CHECK(s.games_total == 1000);
    CHECK(s.games_succeeded == 184);
    CHECK(s.rate == 0.184);
    CHECK(df::format_percent(s.percent()) == "18.4%");

    std::vector<df::ValidationReport> none(7, report(false));
    CHECK(df::format_percent(df::game_success_rate(none).percent()) == "0.0%");
    const auto empty = df::game_success_rate({});
    CHECK(empty.games_total == 0);
    CHECK_FALSE(empty.percent());
    CHECK(df::format_percent(empty.percent()) == "n/a");
  }

  TEST_CASE("yes/no normalization") {
    CHECK(df::normalize_yes_no("There is no cat") == df::YesNo::No);
    CHECK(df::normalize_yes_no("Yes.") == df::YesNo::Yes);
    CHECK(df::normalize_yes_no("maybe") == df::YesNo::Other);
    CHECK(df::normalize_yes_no("  NO, it is not") == df::YesNo::No);
    CHECK(df::normalize_yes_no("Yes, there is no doubt") == df::YesNo::Yes);
    CHECK(df::normalize_yes_no("The drawer isn’t open") == df::YesNo::No);
    CHECK(df::normalize_yes_no("It is open.") == df::YesNo::Yes);
    CHECK(df::normalize_yes_no("There is a red ball") == df::YesNo::Yes);
    CHECK(df::normalize_yes_no("nothing here") == df::YesNo::Other);
    CHECK(df::normalize_yes_no("Nowhere to be seen") == df::YesNo::Other);
    CHECK(df::normalize_yes_no("") == df::YesNo::Other);
  }

  TEST_CASE("a leading no always wins") {
    const auto items = df::read_vqa_items(fixture("eval/vqa_items.jsonl"));
    const auto episodes = scored_lines("eval/episodes.jsonl");
    std::vector<std::string> corpus;
    for (const auto& i : items) corpus.push_back(i.question);
    for (const auto& r : episodes.replies) corpus.push_back(r);
    corpus.insert(corpus.end(), {"", "yes", "There is a cat", "it is", "Yes!"});
    for (const auto& s : corpus) CHECK_MESSAGE(df::normalize_yes_no("no " + s) == df::YesNo::No, s);
  }

  TEST_CASE("count normalization") {
    CHECK(df::normalize_count("one") == 1);
    CHECK(df::normalize_count("none") == 0);
    CHECK(df::normalize_count("I see 12 apples") == 12);
    CHECK(df::normalize_count("There are no dogs") == 0);
    CHECK(df::normalize_count("Twenty.") == 20);
    CHECK(df::normalize_count("3 or 4") == 3);
    CHECK(df::normalize_count("several") == std::nullopt);
    CHECK(df::normalize_count("") == std::nullopt);
  }

  TEST_CASE("the lexicon file matches the built-in defaults") {
    const fs::path path = fs::path(DF_FIXTURE_DIR) / "../../data/yes_no_lexicon.json";
    CHECK(df::YesNoLexicon::load(path) == df::YesNoLexicon::defaults());
    TempDir dir;
    spit(dir / "custom.json", R"({"leading_yes":["yep"],"leading_no":["nope"],"negation_cues":[],"affirmative_cues":[]})");
    const auto custom = df::YesNoLexicon::load(dir / "custom.json");
    CHECK(df::normalize_yes_no("yep", custom) == df::YesNo::Yes);
    CHECK(df::normalize_yes_no("There is no cat", custom) == df::YesNo::Other);
    spit(dir / "bad.json", R"({"leading_yes":"yep"})");
    CHECK(error_kind_of([&] { df::YesNoLexicon::load(dir / "bad.json"); }) == df::ErrorKind::ParseError);
  }

  TEST_CASE("ten hand-scored VQA items") {
    const auto items = df::read_vqa_items(fixture("eval/vqa_items.jsonl"));
    const auto expected = scored_lines("eval/vqa_items.jsonl");
    REQUIRE(items.size() == 10);
    auto rec = std::make_shared<RecordingBackend>(
        std::make_shared<df::ScriptedBackend>([&] {
          std::map<std::string, std::vector<std::string>> script;
          for (std::size_t i = 0; i < items.size(); ++i) script[fmt::format("vqa-{:06d}", i)] = {expected.replies[i]};
          return script;
        }()));
    const auto report = df::score_vqa(items, plain_corpus(5), endpoint(rec), {.concurrency = 3});
    REQUIRE(report.items.size() == 10);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      CHECK_MESSAGE(report.items[i].correct == expected.correct[i], items[i].question);
      correct += report.items[i].correct;
    }
    CHECK(correct == 7);
    const auto& yn = report.per_type.at("yes_no");
    const auto& count = report.per_type.at("counting");
    CHECK(yn.total == 5);
    CHECK(yn.correct == 3);
    CHECK(count.total == 5);
    CHECK(count.correct == 4);
    CHECK(df::format_percent(df::percent(yn.correct + count.correct, yn.total + count.total)) == "70.0%");
    for (const auto& p : rec->payloads()) {
      CHECK(p.role == df::Role::Describer);
      CHECK(p.sampling.temperature == 0.0);
      CHECK(p.images.size() == 1);
    }
  }

  TEST_CASE("empty and all-other VQA inputs") {
    const auto empty = df::score_vqa({}, plain_corpus(1), scripted({}));
    CHECK(empty.per_type.at("yes_no").total == 0);
    CHECK_FALSE(empty.per_type.at("yes_no").accuracy());
    const auto json = nlohmann::json::parse(df::to_json(empty));
    CHECK(json["per_type"]["yes_no"]["empty"] == true);
    CHECK(json["per_type"]["yes_no"]["accuracy"].is_null());

    std::vector<df::VqaItem> items;
    for (int i = 0; i < 6; ++i) items.push_back({"img-1", "Is it red?", {i % 2 ? "yes" : "no"}, df::QuestionType::YesNo});
    const auto report = df::score_vqa(items, plain_corpus(1),
                                      callback([](const df::PromptPayload&, const df::InvocationContext&) {
                                        return std::string("perhaps");
                                      }));
    CHECK(report.per_type.at("yes_no").correct == 0);
    CHECK(df::format_percent(report.per_type.at("yes_no").accuracy()) == "0.0%");
  }

  TEST_CASE("backend failures leave items unscored and never correct") {
    std::vector<df::VqaItem> items;
    for (int i = 0; i < 4; ++i) items.push_back({"img-1", "Is it red?", {"yes"}, df::QuestionType::YesNo});
    const auto agent = callback([](const df::PromptPayload&, const df::InvocationContext& ctx) -> std::string {
      if (ctx.game_id == "vqa-000001") throw df::Error(df::ErrorKind::RemoteUnavailable, "down");
      if (ctx.game_id == "vqa-000002") return "   ";
      return "yes";
    });
    const auto report = df::score_vqa(items, plain_corpus(1), agent);
    const auto& s = report.per_type.at("yes_no");
    CHECK(s.total == 4);
    CHECK(s.unscored == 1);
    CHECK(s.scored == 3);
    CHECK(s.scored + s.unscored == s.total);
    CHECK(s.correct == 2);
    CHECK_FALSE(report.items[1].scored);
    CHECK_FALSE(report.items[1].correct);
    CHECK(report.items[2].scored);
    CHECK_FALSE(report.items[2].correct);
    CHECK(df::format_percent(s.accuracy()) == "50.0%");
  }

  TEST_CASE("VQA accuracy is invariant to item order and deterministic") {
    const auto items = df::read_vqa_items(fixture("eval/vqa_items.jsonl"));
    const auto replies = scored_lines("eval/vqa_items.jsonl").replies;
    const auto corpus = plain_corpus(5);
    const auto a = df::score_vqa(items, corpus, per_item("vqa", replies));
    const auto b = df::score_vqa(items, corpus, per_item("vqa", replies), {.concurrency = 4});
    CHECK(df::to_json(a) == df::to_json(b));

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    df::Rng rng(3);
    rng.shuffle(order);
    std::vector<df::VqaItem> shuffled;
    std::vector<std::string> shuffled_replies;
    for (auto i : order) {
      shuffled.push_back(items[i]);
      shuffled_replies.push_back(replies[i]);
    }
    const auto c = df::score_vqa(shuffled, corpus, per_item("vqa", shuffled_replies));
    for (const auto& [type, stats] : a.per_type) CHECK(c.per_type.at(type).correct == stats.correct);
  }

  TEST_CASE("a judge agent can override the rules") {
    std::vector<df::VqaItem> items{{"img-1", "Is it red?", {"yes"}, df::QuestionType::YesNo},
                                   {"img-1", "Is it blue?", {"no"}, df::QuestionType::YesNo}};
    const auto agent = callback([](const df::PromptPayload&, const df::InvocationContext&) {
      return std::string("It could be described that way.");
    });
    const auto judge = callback([](const df::PromptPayload& p, const df::InvocationContext&) -> std::string {
      CHECK(p.role == df::Role::YesNoJudge);
      return p.text.find("red") != std::string::npos ? "yes" : "It is.";
    });
    df::EvalOptions options;
    options.judge_mode = df::JudgeMode::Agent;
    CHECK(error_kind_of([&] { df::score_vqa(items, plain_corpus(1), agent, options); }) ==
          df::ErrorKind::InvalidConfig);
    options.judge = &judge;
    const auto report = df::score_vqa(items, plain_corpus(1), agent, options);
    CHECK(report.per_type.at("yes_no").correct == 1);
    CHECK(report.items[0].judge_label == std::optional<std::string>("yes"));
    CHECK(report.items[1].judge_label == std::optional<std::string>("yes"));
    CHECK(report.items[0].normalized == "yes");
    CHECK(report.judge_disagreements == 2);
  }

  TEST_CASE("success detection on the 200-episode fixture") {
    const auto episodes = df::read_episodes(fixture("eval/episodes.jsonl"));
    const auto expected = scored_lines("eval/episodes.jsonl");
    REQUIRE(episodes.size() == 200);
    const auto report = df::success_detection_eval(episodes, frames_for(episodes), per_item("episode", expected.replies),
                                                   {.concurrency = 4});
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      CHECK_MESSAGE(report.items[i].correct == expected.correct[i], expected.replies[i]);
    }
    CHECK(report.stats.total == 200);
    CHECK(report.stats.correct == 113);
    CHECK(report.stats.accuracy() == 56.5);
    CHECK(df::format_percent(report.stats.accuracy()) == "56.5%");
    std::size_t cells = 0;
    for (const auto& [gold, row] : report.confusion) {
      for (const auto& [pred, n] : row) cells += n;
    }
    CHECK(cells == 200);
    CHECK(report.confusion.at("yes").at("yes") + report.confusion.at("no").at("no") == 113);
  }

  TEST_CASE("success detection edge cases") {
    std::vector<df::Episode> all_yes;
    for (int i = 0; i < 5; ++i) all_yes.push_back({fmt::format("f{}", i), "open the drawer", "Is the drawer open?", df::YesNo::Yes});
    const auto corpus = frames_for(all_yes);
    const auto yes = callback([](const df::PromptPayload& p, const df::InvocationContext&) {
      CHECK(p.role == df::Role::SuccessDetection);
      CHECK(p.text.find("Is the drawer open?") != std::string::npos);
      return std::string("yes");
    });
    CHECK(df::success_detection_eval(all_yes, corpus, yes).stats.accuracy() == 100.0);

    const auto vague = callback([](const df::PromptPayload&, const df::InvocationContext&) {
      return std::string("The picture is blurry.");
    });
    const auto report = df::success_detection_eval(all_yes, corpus, vague);
    CHECK(report.stats.accuracy() == 0.0);
    CHECK(report.confusion.at("yes").at("other") == 5);

    TempDir dir;
    spit(dir / "bad.jsonl", R"({"final_frame_id":"f","task_label":"t","completion_question":"q","gold":"maybe"})" "\n");
    CHECK(error_kind_of([&] { df::read_episodes(dir / "bad.jsonl"); }) == df::ErrorKind::ParseError);
  }

  TEST_CASE("rendered tables") {
    std::vector<df::ValidationReport> reports;
    for (int i = 0; i < 1000; ++i) reports.push_back(report(i < 184));
    const auto table = df::render_table(df::game_success_rate(reports));
    CHECK(table.find("18.4%") != std::string::npos);
    CHECK(table.find("1000") != std::string::npos);
    const auto plain = df::render_table({"A", "Value"}, {{"x", "1"}, {"longer", "22"}});
    CHECK(plain.find("longer") != std::string::npos);
    CHECK(std::count(plain.begin(), plain.end(), '\n') == 4);
  }
}
