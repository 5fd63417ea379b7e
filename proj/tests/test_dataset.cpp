#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/dataset.hpp"
#include "dialog_forge/filter.hpp"
#include "dialog_forge/game.hpp"
#include "dialog_forge/hashing.hpp"
#include "dialog_forge/rng.hpp"
#include "dialog_forge/synthetic_world.hpp"
#include "support.hpp"

namespace df = dialog_forge;
namespace synth = dialog_forge::synth;
using namespace test_support;

namespace {

/// A successful k-turn dialog over img-1..img-n with distinct questions.
df::DialogRecord retained_dialog(const std::string& game_id, int k, int n = 4, int target = 2, int max_turns = 3,
                                 const std::string& image_prefix = "img") {
  df::DialogRecord d;
  d.spec.game_id = game_id;
  for (int i = 1; i <= n; ++i) d.spec.image_ids.push_back(fmt::format("{}-{}", image_prefix, i));
  d.spec.target_index = target;
  d.spec.max_turns = max_turns;
  d.spec.corpus_id = "plain";
  std::string summary;
  for (int t = 0; t < k; ++t) {
    df::Turn turn;
    turn.question = fmt::format("{} question {}?", game_id, t);
    turn.answer = fmt::format("answer {}", t);
    summary += fmt::format("Fact {}. ", t);
    turn.summary_after = summary;
    d.turns.push_back(turn);
  }
  d.final_action = df::Guess{target};
  d.outcome = df::Outcome::Success;
  return d;
}

df::ValidationReport pass(const df::DialogRecord& d) {
  df::ValidationReport r;
  r.game_id = d.spec.game_id;
  r.passed = true;
  return r;
}

std::size_t count_variant(const std::vector<df::TrainingExample>& xs, std::string_view v) {
  return static_cast<std::size_t>(std::count_if(xs.begin(), xs.end(), [&](const auto& x) { return x.variant() == v; }));
}

df::Dataset build(const std::vector<df::DialogRecord>& dialogs, df::DatasetMode mode, df::ExtractOptions options = {}) {
  std::vector<df::ValidationReport> reports;
  for (const auto& d : dialogs) reports.push_back(pass(d));
  return df::build_sft_dataset(dialogs, reports, mode, options);
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("a k-turn dialog yields k describer and k+1 guesser examples") {
    for (int k = 0; k <= 3; ++k) {
      const auto d = retained_dialog("g", k);
      const auto xs = df::extract_examples(d, pass(d));
      CHECK(count_variant(xs, "describer") == static_cast<std::size_t>(k));
      CHECK(count_variant(xs, "guesser") == static_cast<std::size_t>(k + 1));
      CHECK(xs.size() == static_cast<std::size_t>(2 * k + 1));
    }
  }

  TEST_CASE("a two-turn dialog in dialog order") {
    const auto d = retained_dialog("g", 2);
    const auto xs = df::extract_examples(d, pass(d), {.round_tag = 2});
    REQUIRE(xs.size() == 5);
    const auto& g0 = std::get<df::GuesserExample>(xs[0].body);
    CHECK(g0.summary.empty());
    CHECK(g0.target_text == "Question: g question 0?");
    CHECK(g0.image_ids == d.spec.image_ids);
    const auto& d0 = std::get<df::DescriberExample>(xs[1].body);
    CHECK(d0 == df::DescriberExample{"img-2", "g question 0?", "answer 0"});
    const auto& g1 = std::get<df::GuesserExample>(xs[2].body);
    CHECK(g1.summary == d.turns[0].summary_after);
    const auto& last = std::get<df::GuesserExample>(xs[4].body);
    CHECK(last.summary == d.turns[1].summary_after);
    CHECK(last.target_text == "Answer: I know the answer, it is image 2.");
    CHECK_FALSE(last.forced);
    for (const auto& x : xs) {
      CHECK(x.round_tag == 2);
      CHECK(x.source_game_id == "g");
      CHECK_FALSE(x.target_text().empty());
    }
  }

  TEST_CASE("a final guess at the budget is marked forced") {
    const auto d = retained_dialog("g", 3, 4, 1, 3);
    const auto xs = df::extract_examples(d, pass(d));
    CHECK(std::get<df::GuesserExample>(xs.back().body).forced);
    CHECK_FALSE(std::get<df::GuesserExample>(xs.front().body).forced);
  }

  TEST_CASE("the figure dialog gives the count describer example") {
    const df::Corpus world("fig", {attr_record("target", "orange", "white", "square", 9),
                                   attr_record("other", "orange", "white", "square", 4)});
    const auto agent = endpoint(std::make_shared<synth::SyntheticOracleBackend>(world, synth::DomainSpec{}, synth::OraclePolicy{}));
    df::GameSpec spec;
    spec.game_id = "figure";
    spec.image_ids = {"other", "target"};
    spec.target_index = 2;
    spec.corpus_id = "fig";
    const auto dialog = df::run_game(spec, world, agent, agent);
    const auto report = df::validate_dialog(dialog, world, agent);
    REQUIRE(report.passed);
    const auto xs = df::extract_examples(dialog, report);
    CHECK(std::find(xs.begin(), xs.end(),
                    df::TrainingExample{df::DescriberExample{"target", "How many objects can you see?", "9"}, "figure", 1}) !=
          xs.end());
  }

  TEST_CASE("non-retained dialogs are refused") {
    const auto d = retained_dialog("g", 1);
    auto failed = pass(d);
    failed.passed = false;
    CHECK(error_kind_of([&] { df::extract_examples(d, failed); }) == df::ErrorKind::NotRetained);
    auto other = pass(d);
    other.game_id = "h";
    CHECK(error_kind_of([&] { df::extract_examples(d, other); }) == df::ErrorKind::NotRetained);
    auto lost = d;
    lost.outcome = df::Outcome::Failure;
    CHECK(error_kind_of([&] { df::extract_examples(lost, pass(lost)); }) == df::ErrorKind::NotRetained);
    const std::vector<df::DialogRecord> dialogs{d};
    CHECK(error_kind_of([&] { df::build_sft_dataset(dialogs, {}, df::DatasetMode::Full); }) ==
          df::ErrorKind::NotRetained);
  }

  TEST_CASE("ten one-turn dialogs: full and answers_only") {
    std::vector<df::DialogRecord> dialogs;
    for (int i = 0; i < 10; ++i) {
      const auto id = fmt::format("g{:02d}", i);
      dialogs.push_back(retained_dialog(id, 1, 4, 2, 3, id));
    }
    const auto full = build(dialogs, df::DatasetMode::Full);
    CHECK(full.counts.per_variant.at("describer") == 10);
    CHECK(full.counts.per_variant.at("guesser") == 20);
    CHECK(full.counts.total == 30);
    CHECK(full.counts.duplicates_removed == 0);
    CHECK(full.mode == "full");

    const auto answers = build(dialogs, df::DatasetMode::AnswersOnly);
    CHECK(answers.counts.per_variant.at("describer") == 10);
    CHECK(answers.counts.per_variant.at("guesser") == 0);
    CHECK(answers.mode == "answers_only");
    for (const auto& x : answers.examples) CHECK(x.variant() == "describer");
  }

  TEST_CASE("identical dialogs collapse") {
    std::vector<df::DialogRecord> dialogs{retained_dialog("g", 2), retained_dialog("g", 2)};
    const auto ds = build(dialogs, df::DatasetMode::Full);
    CHECK(ds.counts.before_dedup.at("describer") == 4);
    CHECK(ds.counts.before_dedup.at("guesser") == 6);
    CHECK(ds.counts.per_variant.at("describer") == 2);
    CHECK(ds.counts.per_variant.at("guesser") == 3);
    CHECK(ds.counts.duplicates_removed == 5);
  }

  TEST_CASE("before-dedup counts equal the turn sums on random retained sets") {
    df::Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<df::DialogRecord> dialogs;
      std::size_t sum_k = 0;
      const int m = static_cast<int>(rng.below(30));
      for (int i = 0; i < m; ++i) {
        const int k = static_cast<int>(rng.below(4));
        sum_k += static_cast<std::size_t>(k);
        dialogs.push_back(retained_dialog(fmt::format("t{}-g{}", trial, i), k, 2 + static_cast<int>(rng.below(3)), 1));
      }
      const auto ds = build(dialogs, df::DatasetMode::Full);
      CHECK(ds.counts.before_dedup.at("describer") == sum_k);
      CHECK(ds.counts.before_dedup.at("guesser") == sum_k + static_cast<std::size_t>(m));
      const auto answers = build(dialogs, df::DatasetMode::AnswersOnly);
      CHECK(answers.counts.before_dedup.at("guesser") == 0);
      CHECK(answers.counts.before_dedup.at("describer") == sum_k);
    }
  }

  TEST_CASE("examples are ordered by game id and never come from rejected dialogs") {
    std::vector<df::DialogRecord> dialogs{retained_dialog("b", 1), retained_dialog("a", 2), retained_dialog("c", 0)};
    auto lost = retained_dialog("z", 1);
    std::vector<df::ValidationReport> reports;
    for (const auto& d : dialogs) reports.push_back(pass(d));
    auto rejected = pass(lost);
    rejected.passed = false;
    reports.push_back(rejected);
    const auto ds = df::build_sft_dataset(dialogs, reports, df::DatasetMode::Full);
    std::vector<std::string> order;
    for (const auto& x : ds.examples) {
      if (order.empty() || order.back() != x.source_game_id) order.push_back(x.source_game_id);
      CHECK(x.source_game_id != "z");
    }
    CHECK(order == std::vector<std::string>{"a", "b", "c"});
  }

  TEST_CASE("summary examples are opt-in") {
    const auto d = retained_dialog("g", 2);
    CHECK(count_variant(df::extract_examples(d, pass(d)), "summary") == 0);
    const auto xs = df::extract_examples(d, pass(d), {.emit_summaries = true});
    CHECK(count_variant(xs, "summary") == 2);
    CHECK(count_variant(xs, "describer") == 2);
    CHECK(count_variant(xs, "guesser") == 3);
  }

  TEST_CASE("self-QA pairs from scripted agents") {
    std::vector<df::ImageRecord> records;
    for (int i = 0; i < 3; ++i) {
      df::ImageRecord r;
      r.image_id = fmt::format("frame-{}", i);
      r.content_ref = r.image_id + ".png";
      records.push_back(r);
    }
    const df::Corpus corpus("aloha", records);
    const auto questions = callback([](const df::PromptPayload& p, const df::InvocationContext& ctx) -> std::string {
      CHECK(p.role == df::Role::SelfQAQuestion);
      if (ctx.game_id == "selfqa:frame-1:0") return "The scene shows a robot arm near a drawer.";
      return "Question: Is there a red ball in the image?";
    });
    const auto answers = callback([](const df::PromptPayload& p, const df::InvocationContext&) -> std::string {
      CHECK(p.role == df::Role::SelfQAAnswer);
      CHECK(p.text.find("Is there a red ball in the image?") != std::string::npos);
      return "Answer: yes";
    });
    const auto ds = df::build_self_qa_dataset(corpus, questions, answers, 1);
    REQUIRE(ds.examples.size() == 2);
    CHECK(std::get<df::DescriberExample>(ds.examples[0].body) ==
          df::DescriberExample{"frame-0", "Is there a red ball in the image?", "yes"});
    CHECK(ds.counts.skipped == 1);
    REQUIRE(ds.log.size() == 1);
    CHECK(ds.log[0].find("frame-1") != std::string::npos);

    CHECK(df::build_self_qa_dataset(corpus, questions, answers, 0).examples.empty());

    const auto broken = callback([](const df::PromptPayload&, const df::InvocationContext&) -> std::string {
      throw df::Error(df::ErrorKind::RemoteUnavailable, "down");
    });
    const auto none = df::build_self_qa_dataset(corpus, questions, broken, 2, {.concurrency = 3});
    CHECK(none.examples.empty());
    CHECK(none.counts.skipped == 6);
  }

  TEST_CASE("description SFT pairs final frames with task labels") {
    std::vector<df::ImageRecord> records;
    for (int e = 0; e < 200; ++e) {
      for (int f = 0; f < 3; ++f) {
        df::ImageRecord r;
        r.image_id = fmt::format("ep{}-f{}", e, f);
        r.content_ref = r.image_id + ".png";
        r.episode_id = fmt::format("ep{}", e);
        r.frame_index = f;
        r.task_label = fmt::format("task {}", e % 10);
        records.push_back(r);
      }
    }
    const auto finals = df::final_frames(df::Corpus("aloha", records));
    const auto ds = df::build_description_sft(finals);
    CHECK(ds.counts.per_variant.at("description") == 200);
    CHECK(std::get<df::DescriptionExample>(ds.examples[0].body) == df::DescriptionExample{"ep0-f2", "task 0"});

    CHECK(df::build_description_sft(df::Corpus("empty", {})).examples.empty());
    CHECK(error_kind_of([] { df::build_description_sft(plain_corpus(2)); }) == df::ErrorKind::MissingLabel);
  }

  TEST_CASE("dataset files round-trip and reference images") {
    const auto corpus = plain_corpus(4);
    std::vector<df::DialogRecord> dialogs{retained_dialog("a", 2), retained_dialog("b", 3, 4, 4, 3)};
    dialogs[1].spec.task_label = "close the drawer";
    auto ds = build(dialogs, df::DatasetMode::Full, {.round_tag = 3, .emit_summaries = true});
    ds.examples.push_back(df::TrainingExample{df::DescriptionExample{"img-1", "stack the cups"}, {}, 3});
    TempDir dir;
    const auto hash = df::write_dataset(ds, dir / "dataset.jsonl", df::corpus_resolver(corpus));
    CHECK(hash == df::sha256_hex(slurp(dir / "dataset.jsonl")));
    CHECK(df::read_dataset(dir / "dataset.jsonl") == ds.examples);
    for (const auto& x : ds.examples) CHECK(df::example_from_json(df::to_jsonl(x)) == x);

    const auto first = nlohmann::json::parse(df::to_jsonl(ds.examples[1], df::corpus_resolver(corpus)));
    CHECK(first["meta"]["variant"] == "describer");
    CHECK(first["meta"]["game_id"] == "a");
    CHECK(first["meta"]["round"] == 3);
    int images = 0;
    for (const auto& in : first["inputs"]) {
      if (in.contains("image_ref")) {
        ++images;
        CHECK(in["image_ref"] == "file://images/img-2.png");
      } else {
        CHECK(in.contains("text"));
      }
    }
    CHECK(images == 1);
    const auto guesser = nlohmann::json::parse(df::to_jsonl(ds.examples[0], df::corpus_resolver(corpus)));
    std::vector<std::string> refs;
    for (const auto& in : guesser["inputs"]) {
      if (in.contains("image_ref")) refs.push_back(in["image_ref"]);
    }
    CHECK(refs == std::vector<std::string>{"file://images/img-1.png", "file://images/img-2.png",
                                           "file://images/img-3.png", "file://images/img-4.png"});

    const auto manifest = nlohmann::json::parse(df::manifest_json(ds, "run-1/round-3", hash));
    CHECK(manifest["source_run_id"] == "run-1/round-3");
    CHECK(manifest["mode"] == "full");
    CHECK(manifest["round_tag"] == 3);
    CHECK(manifest["content_hash"] == "sha256:" + hash);
    CHECK(manifest["counts"]["describer"] == 5);
    CHECK(manifest["counts"]["guesser"] == 7);
    CHECK(error_kind_of([] { df::example_from_json("{\"meta\":{}}"); }) == df::ErrorKind::ParseError);
  }

  TEST_CASE("export inlines referenced images as base64") {
    TempDir dir;
    spit(dir / "images/img-1.png", "PNGDATA");
    spit(dir / "images/img-2.png", "MORE");
    std::vector<df::ImageRecord> records;
    for (int i = 1; i <= 2; ++i) {
      df::ImageRecord r;
      r.image_id = fmt::format("img-{}", i);
      r.content_ref = fmt::format("images/img-{}.png", i);
      records.push_back(r);
    }
    const df::Corpus corpus("local", records);
    const auto ds = build({retained_dialog("a", 1, 2, 1)}, df::DatasetMode::Full);
    df::write_dataset(ds, dir / "dataset.jsonl", df::corpus_resolver(corpus));
    const auto n = df::export_inline(dir / "dataset.jsonl", dir / "inline.jsonl", dir.path());
    CHECK(n == 2 + 1 + 2);
    const auto body = slurp(dir / "inline.jsonl");
    CHECK(body.find("image_ref") == std::string::npos);
    CHECK(body.find(df::base64_encode("PNGDATA")) != std::string::npos);
    CHECK(body.find("image/png") != std::string::npos);

    spit(dir / "remote.jsonl", R"({"inputs":[{"image_ref":"https://example.org/x.png"}],"target_text":"t","meta":{"variant":"description","image_id":"x"}})" "\n");
    CHECK(error_kind_of([&] { df::export_inline(dir / "remote.jsonl", dir / "o.jsonl", dir.path()); }) ==
          df::ErrorKind::DanglingContentRef);
  }
}
