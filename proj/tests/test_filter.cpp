#include <cmath>

#include <fmt/format.h>

#include "dialog_forge/filter.hpp"
#include "dialog_forge/game.hpp"
#include "dialog_forge/rng.hpp"
#include "dialog_forge/synthetic_world.hpp"
#include "support.hpp"

namespace df = dialog_forge;
namespace synth = dialog_forge::synth;
using namespace test_support;

namespace {

df::GameSpec spec_of(std::vector<std::string> ids, int target, std::string game_id = "g-1") {
  df::GameSpec spec;
  spec.game_id = std::move(game_id);
  spec.image_ids = std::move(ids);
  spec.target_index = target;
  spec.corpus_id = "fixture";
  spec.seed = df::derive_seed(3, spec.game_id);
  return spec;
}

/// A recorded dialog whose last summary is `summary` and whose final guess is `guess`.
df::DialogRecord dialog_of(df::GameSpec spec, const std::string& summary, int guess) {
  df::DialogRecord d;
  d.spec = std::move(spec);
  if (!summary.empty()) {
    df::Turn t;
    t.question = "What shape are the objects?";
    t.answer = "square";
    t.summary_after = summary;
    t.raw_guesser_output = "Question: What shape are the objects?";
    t.raw_describer_output = "square";
    d.turns.push_back(t);
  }
  d.final_action = df::Guess{guess};
  d.outcome = guess == d.spec.target_index ? df::Outcome::Success : df::Outcome::Failure;
  return d;
}

df::Corpus quad() {
  return df::Corpus("quad", {attr_record("a", "blue", "green", "circle", 3), attr_record("b", "blue", "green", "square", 3),
                             attr_record("c", "blue", "orange", "circle", 3),
                             attr_record("d", "blue", "orange", "square", 3)});
}

df::AgentEndpoint oracle(const df::Corpus& world, synth::OraclePolicy policy = {}, std::uint64_t seed = 0) {
  return endpoint(std::make_shared<synth::SyntheticOracleBackend>(world, synth::DomainSpec{}, policy, seed), "oracle");
}

std::string summary_of(synth::ConstraintSet constraints) { return synth::render_summary(constraints); }

/// Replays are independent uniform draws keyed by the call sequence.
df::AgentEndpoint uniform_replayer(int n) {
  return callback([n](const df::PromptPayload&, const df::InvocationContext& ctx) {
    df::Rng rng(df::hash_combine(ctx.seed, ctx.call_seq));
    return df::format_action(df::Guess{1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)))});
  });
}

}  // namespace

TEST_SUITE("filter") {
  TEST_CASE("permutations place the target at every position with distractors fixed") {
    const auto spec = spec_of({"d1", "T", "d2", "d3"}, 2);
    const std::vector<std::vector<std::string>> expected{
        {"T", "d1", "d2", "d3"}, {"d1", "T", "d2", "d3"}, {"d1", "d2", "T", "d3"}, {"d1", "d2", "d3", "T"}};
    CHECK(df::permutations_for(spec) == expected);
    CHECK(df::permutation_positions(spec) ==
          std::vector<std::vector<int>>{{2, 1, 3, 4}, {1, 2, 3, 4}, {1, 3, 2, 4}, {1, 3, 4, 2}});

    CHECK(df::permutations_for(spec_of({"T", "d1"}, 1)) ==
          std::vector<std::vector<std::string>>{{"T", "d1"}, {"d1", "T"}});
    CHECK(df::permutations_for(spec_of({"T"}, 1)) == std::vector<std::vector<std::string>>{{"T"}});
  }

  TEST_CASE("permutations are N orderings of the original ids for any target") {
    for (int n = 1; n <= 8; ++n) {
      std::vector<std::string> ids;
      for (int i = 0; i < n; ++i) ids.push_back(fmt::format("x{}", i));
      for (int t = 1; t <= n; ++t) {
        const auto spec = spec_of(ids, t);
        const auto perms = df::permutations_for(spec);
        REQUIRE(perms.size() == static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
          CHECK(perms[k][k] == spec.target_id());
          auto rest = perms[k];
          rest.erase(rest.begin() + k);
          auto distractors = ids;
          distractors.erase(distractors.begin() + (t - 1));
          CHECK(rest == distractors);
        }
      }
    }
  }

  TEST_CASE("a single-image dialog passes vacuously") {
    const auto world = quad();
    const auto d = dialog_of(spec_of({"b"}, 1), "", 1);
    const auto report = df::validate_dialog(d, world, oracle(world));
    CHECK(report.passed);
    CHECK(report.orderings == std::vector<std::vector<int>>{{1}});
    CHECK(report.guesses == std::vector<std::optional<std::string>>{"b"});
  }

  TEST_CASE("an identifying summary passes at every position") {
    const auto world = quad();
    const std::string summary = summary_of({{synth::Attribute::Shape, "square", true},
                                            {synth::Attribute::ObjectColor, "green", true}});
    const auto d = dialog_of(spec_of({"a", "b", "c", "d"}, 2), summary, 2);
    const auto report = df::validate_dialog(d, world, oracle(world));
    CHECK(report.passed);
    REQUIRE(report.orderings.size() == 4);
    for (const auto& g : report.guesses) CHECK(g == std::optional<std::string>("b"));
    CHECK(report.failure_positions.empty());
    CHECK_FALSE(report.reason);
  }

  TEST_CASE("consistent, lucky and failed dialogs: only the consistent one is retained") {
    const auto world = quad();
    const auto consistent = dialog_of(spec_of({"a", "b", "c", "d"}, 2, "consistent"),
                                      summary_of({{synth::Attribute::Shape, "square", true},
                                                  {synth::Attribute::ObjectColor, "green", true}}),
                                      2);
    const auto lucky = dialog_of(spec_of({"a", "b", "c", "d"}, 3, "lucky"),
                                 summary_of({{synth::Attribute::BackgroundColor, "blue", true}}), 3);
    auto failure = dialog_of(spec_of({"a", "b", "c", "d"}, 1, "failure"), "", 4);
    const std::vector<df::DialogRecord> dialogs{consistent, lucky, failure};

    const auto result = df::filter_corpus(dialogs, world, oracle(world));
    REQUIRE(result.retained.size() == 1);
    CHECK(result.retained[0].spec.game_id == "consistent");
    REQUIRE(result.reports.size() == 3);
    CHECK(result.reports[0].passed);
    CHECK_FALSE(result.reports[1].passed);
    CHECK(result.reports[1].reason == std::optional<std::string>("target_missed"));
    CHECK(result.reports[1].failure_positions.size() == 1);
    CHECK_FALSE(result.reports[2].passed);
    CHECK(result.reports[2].reason == std::optional<std::string>("not_successful"));
    for (const auto& g : result.reports[2].guesses) CHECK_FALSE(g);
    CHECK(result.reports[2].orderings.size() == 4);

    const auto random = df::filter_corpus(dialogs, world, uniform_replayer(4));
    for (const auto& r : random.retained) CHECK(r.spec.game_id != "failure");
    const auto always_first = df::filter_corpus(dialogs, world, scripted(std::vector<std::string>(64, "Answer: I know the answer, it is image 1.")));
    CHECK(always_first.retained.empty());
  }

  TEST_CASE("validation stops at the first miss and marks the rest skipped") {
    const auto world = quad();
    const auto d = dialog_of(spec_of({"a", "b", "c", "d"}, 1), "The object is round.", 1);
    int calls = 0;
    const auto guesser = callback([&](const df::PromptPayload&, const df::InvocationContext&) {
      ++calls;
      return std::string("Answer: I know the answer, it is image 1.");
    });
    const auto report = df::validate_dialog(d, world, guesser);
    CHECK_FALSE(report.passed);
    CHECK(calls == 2);
    CHECK(report.failure_positions == std::vector<int>{2});
    CHECK(report.guesses[0] == std::optional<std::string>("a"));
    CHECK(report.guesses[1] == std::optional<std::string>("b"));
    CHECK_FALSE(report.guesses[2]);
    CHECK_FALSE(report.guesses[3]);
  }

  TEST_CASE("replay failures are recorded, not thrown") {
    const auto world = quad();
    const auto d = dialog_of(spec_of({"a", "b"}, 1), "Round.", 1);
    const auto report =
        df::validate_dialog(d, world, scripted({"Question: a?", "Question: b?", "Question: c?", "Question: d?"}));
    CHECK_FALSE(report.passed);
    REQUIRE(report.reason);
    CHECK(report.reason->starts_with("replay_failed"));
    CHECK(report.failure_positions == std::vector<int>{1});
  }

  TEST_CASE("empty input gives empty outputs") {
    const auto world = quad();
    const auto result = df::filter_corpus({}, world, oracle(world));
    CHECK(result.retained.empty());
    CHECK(result.reports.empty());
  }

  TEST_CASE("reports round-trip through JSONL") {
    const auto world = quad();
    const auto d = dialog_of(spec_of({"a", "b", "c", "d"}, 3), "Round.", 3);
    for (const auto& r : {df::validate_dialog(d, world, uniform_replayer(4)),
                          df::validate_dialog(dialog_of(spec_of({"a", "b"}, 1), "", 2), world, oracle(world)),
                          df::validate_dialog(dialog_of(spec_of({"b"}, 1), "", 1), world, oracle(world))}) {
      CHECK(df::report_from_json(df::to_jsonl(r)) == r);
    }
  }

  TEST_CASE("retained dialogs re-validate and are all successes") {
    const synth::DomainSpec domain;
    const auto world = synth::gen_world(17, 200, domain);
    synth::OraclePolicy policy;
    policy.describer_noise = 0.1;
    const auto agent = oracle(world, policy, 9);
    df::Rng rng(5);
    std::vector<df::DialogRecord> dialogs;
    for (int g = 0; g < 1000; ++g) {
      std::vector<std::string> ids;
      for (auto i : rng.sample_indices(world.size(), 4)) ids.push_back(world.records()[i].image_id);
      dialogs.push_back(df::run_game(spec_of(ids, 1 + static_cast<int>(rng.below(4)), fmt::format("g-{}", g)), world,
                                     agent, agent));
    }
    const auto result = df::filter_corpus(dialogs, world, agent, {}, 4);
    std::size_t successes = 0;
    for (const auto& d : dialogs) successes += d.succeeded();
    CHECK(result.retained.size() <= successes);
    CHECK(result.retained.size() > 0);
    for (const auto& d : result.retained) {
      CHECK(d.succeeded());
      CHECK(df::validate_dialog(d, world, agent).passed);
    }
    const auto serial = df::filter_corpus(dialogs, world, agent, {}, 1);
    CHECK(serial.reports == result.reports);
  }

  TEST_CASE("uniform replays retain (1/N)^N of successful dialogs") {
    const auto world = plain_corpus(4);
    struct Case {
      int n;
      int dialogs;
    };
    for (const auto c : {Case{2, 20'000}, Case{4, 100'000}}) {
      std::vector<std::string> ids;
      for (int i = 1; i <= c.n; ++i) ids.push_back("img-" + std::to_string(i));
      const auto guesser = uniform_replayer(c.n);
      int passed = 0;
      for (int g = 0; g < c.dialogs; ++g) {
        const int t = 1 + g % c.n;
        passed += df::validate_dialog(dialog_of(spec_of(ids, t, fmt::format("g-{}", g)), "", t), world, guesser).passed;
      }
      const double p = std::pow(1.0 / c.n, c.n);
      const double sigma = std::sqrt(p * (1 - p) / c.dialogs);
      const double rate = static_cast<double>(passed) / c.dialogs;
      INFO("N=" << c.n << " rate=" << rate);
      CHECK(std::abs(rate - p) <= 3 * sigma);
      if (c.n == 4) CHECK(std::abs(rate - p) <= 0.0006);
    }
  }
}
