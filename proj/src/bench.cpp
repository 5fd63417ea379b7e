#include "dialog_forge/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "dialog_forge/eval.hpp"
#include "dialog_forge/filter.hpp"
#include "dialog_forge/game.hpp"
#include "dialog_forge/parallel.hpp"

namespace dialog_forge::bench {

using synth::OraclePolicy;

namespace {

constexpr double kNoise = 0.1;

std::size_t scaled(std::size_t n, const BenchOptions& o) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * o.scale)));
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

AgentEndpoint oracle(const Corpus& world, const BenchOptions& o, const OraclePolicy& policy, std::string name,
                     std::uint64_t seed) {
  return AgentEndpoint(std::move(name), std::make_shared<synth::SyntheticOracleBackend>(world, o.domain, policy, seed));
}

struct Played {
  std::vector<DialogRecord> dialogs;
  FilterResult filtered;
  std::size_t succeeded = 0;
  double raw() const { return static_cast<double>(succeeded) / static_cast<double>(dialogs.size()); }
  double retention() const {
    return static_cast<double>(filtered.retained.size()) / static_cast<double>(dialogs.size());
  }
};

Played play(const Corpus& world, const std::vector<GameSpec>& specs, const BenchOptions& o,
            const OraclePolicy& policy, const GameOptions& game_options, std::uint64_t seed) {
  const auto describer = oracle(world, o, policy, "oracle-describer", hash_combine(seed, 1));
  const auto guesser = oracle(world, o, policy, "oracle-guesser", hash_combine(seed, 2));
  Played p;
  p.dialogs.resize(specs.size());
  parallel_for(specs.size(), o.concurrency,
               [&](std::size_t i) { p.dialogs[i] = run_game(specs[i], world, describer, guesser, game_options); });
  p.succeeded = static_cast<std::size_t>(
      std::count_if(p.dialogs.begin(), p.dialogs.end(), [](const DialogRecord& d) { return d.succeeded(); }));
  p.filtered = filter_corpus(p.dialogs, world, guesser, game_options, o.concurrency);
  return p;
}

GameOptions quick_options() {
  GameOptions g;
  g.clock = fixed_clock("1970-01-01T00:00:00Z");
  return g;
}

std::string pct(double rate) { return fmt::format("{:.2f}%", 100.0 * rate); }

std::string interval(double p, double sigma) {
  return fmt::format("[{:.2f}%, {:.2f}%]", 100.0 * (p - 3 * sigma), 100.0 * (p + 3 * sigma));
}

Corpus distinct_world(const BenchOptions& o, std::uint64_t salt, int n_images) {
  return synth::gen_world(hash_combine(o.seed, salt), n_images, o.domain, true, fmt::format("bench-{}", salt));
}

}  // namespace

double binomial_sigma(double p, std::size_t n) noexcept {
  if (n == 0) return 0.0;
  return std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n));
}

Section chance_rate(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Chance rate (uniform-random Guesser, N=4)";
  const int n = 4;
  const std::size_t games = scaled(10'000, o);
  const auto world = distinct_world(o, 11, 64);
  GroupOptions group;
  group.max_turns = 3;
  const auto specs = group_random(world, n, static_cast<int>(games), hash_combine(o.seed, 12), group);
  OraclePolicy policy;
  policy.guesser_strategy = synth::GuesserStrategy::UniformRandomGuess;
  policy.respect_empty_summary = false;
  auto game_options = quick_options();
  game_options.allow_guess_on_empty_summary = true;
  const auto played = play(world, specs, o, policy, game_options, o.seed);

  const double chance = 1.0 / n;
  const double analytic = std::pow(chance, n);
  s.seconds = timer.seconds();
  s.header = {"Games", "Raw success", "Expected", "Retained", "Retention", "Expected (1/N)^N", "Seconds"};
  s.rows.push_back({std::to_string(games), pct(played.raw()), pct(chance), std::to_string(played.filtered.retained.size()),
                    pct(played.retention()), pct(analytic), fmt::format("{:.1f}", s.seconds)});
  s.checks.push_back({"raw success within 25% +/- 1.5%", std::abs(played.raw() - chance) <= 0.015,
                      pct(played.raw())});
  s.checks.push_back({"retention within 0.39% +/- 0.2%", std::abs(played.retention() - analytic) <= 0.002,
                      fmt::format("{} vs analytic {}", pct(played.retention()), pct(analytic))});
  s.checks.push_back({"runtime under 1 minute", s.seconds < 60.0, fmt::format("{:.1f}s", s.seconds)});
  return s;
}

Section filter_soundness(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Filter soundness (N=4, noise 0.1)";
  const std::size_t games = scaled(1'000, o);
  const auto world = distinct_world(o, 21, 64);
  GroupOptions group;
  group.max_turns = 3;
  const auto specs = group_random(world, 4, static_cast<int>(games), hash_combine(o.seed, 22), group);
  OraclePolicy policy;
  policy.describer_noise = kNoise;
  const auto game_options = quick_options();
  const auto played = play(world, specs, o, policy, game_options, o.seed);

  // A second, independently built Guesser with the same policy re-checks every kept dialog.
  const auto guesser = oracle(world, o, policy, "oracle-guesser", hash_combine(o.seed, 2));
  std::size_t revalidated = 0;
  std::size_t unsuccessful = 0;
  for (const auto& d : played.filtered.retained) {
    revalidated += validate_dialog(d, world, guesser, game_options).passed;
    unsuccessful += !d.succeeded();
  }
  std::size_t failed_or_aborted = 0;
  for (const auto& d : played.dialogs) failed_or_aborted += !d.succeeded();
  s.seconds = timer.seconds();
  const auto kept = played.filtered.retained.size();
  s.header = {"Dialogs", "Successful", "Failure/Aborted", "Retained", "Re-validated", "Retained unsuccessful"};
  s.rows.push_back({std::to_string(games), std::to_string(played.succeeded), std::to_string(failed_or_aborted),
                    std::to_string(kept), std::to_string(revalidated), std::to_string(unsuccessful)});
  s.checks.push_back({"every retained dialog re-validates", kept > 0 && revalidated == kept,
                      fmt::format("{}/{}", revalidated, kept)});
  s.checks.push_back({"no retained dialog comes from a Failure/Aborted game", unsuccessful == 0,
                      fmt::format("{} of {} unsuccessful games kept", unsuccessful, failed_or_aborted)});
  return s;
}

namespace {

struct RatePoint {
  std::string label;
  std::size_t games = 0;
  double raw = 0.0;
  double retained = 0.0;
  double sigma() const { return binomial_sigma(raw, games); }
};

/// Upper 3-sigma bound of `lower` sits below the lower 3-sigma bound of `higher`.
bool separated(const RatePoint& higher, const RatePoint& lower) {
  return higher.raw - 3 * higher.sigma() > lower.raw + 3 * lower.sigma();
}

void add_rate_rows(Section& s, const std::vector<RatePoint>& points) {
  s.header = {"Setting", "Games", "Raw success", "3-sigma interval", "Filtered success"};
  for (const auto& p : points) {
    s.rows.push_back({p.label, std::to_string(p.games), pct(p.raw), interval(p.raw, p.sigma()), pct(p.retained)});
  }
}

}  // namespace

synth::DomainSpec compact_domain() {
  synth::DomainSpec d;
  d.background_colors = {"blue", "white"};
  d.object_colors = {"green", "orange"};
  d.shapes = {"circle", "square"};
  d.counts = {1, 2, 3, 4};
  return d;
}

Section difficulty_trend(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Difficulty trend (noise 0.1, InfoGainGreedy, budget 3)";
  const std::size_t games = scaled(5'000, o);
  OraclePolicy policy;
  policy.describer_noise = kNoise;

  auto measure = [&](const BenchOptions& bo, int n_images, const std::string& tag) {
    const auto world = distinct_world(bo, 31, n_images);
    std::vector<RatePoint> points;
    for (int n : {2, 4, 8}) {
      GroupOptions group;
      group.max_turns = 3;
      const auto specs = group_random(world, n, static_cast<int>(games), hash_combine(bo.seed, 32 + n), group);
      const auto played = play(world, specs, bo, policy, quick_options(), hash_combine(bo.seed, n));
      points.push_back({fmt::format("{} N={}", tag, n), games, played.raw(), played.retention()});
    }
    return points;
  };
  // The compact domain needs more questions as N grows; with the default
  // domain one 12-way count question already separates eight images.
  BenchOptions compact = o;
  compact.domain = compact_domain();
  const auto points = measure(compact, static_cast<int>(compact.domain.product()), "compact");
  auto rows = points;
  for (auto& p : measure(o, 256, "default")) rows.push_back(std::move(p));
  add_rate_rows(s, rows);
  s.seconds = timer.seconds();
  const bool decreasing = points[0].raw > points[1].raw && points[1].raw > points[2].raw;
  const bool disjoint = separated(points[0], points[1]) && separated(points[1], points[2]);
  s.checks.push_back({"success strictly decreasing over N=2,4,8", decreasing,
                      fmt::format("{} > {} > {}", pct(points[0].raw), pct(points[1].raw), pct(points[2].raw))});
  s.checks.push_back({"adjacent 3-sigma intervals disjoint", disjoint, ""});
  s.checks.push_back({"runtime under 5 minutes", s.seconds < 300.0, fmt::format("{:.1f}s", s.seconds)});
  return s;
}

Section grouping_trend(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Grouping trend (N=4, noise 0.1)";
  const std::size_t games = scaled(5'000, o);
  // Every tuple of the domain, so each image has neighbours one attribute apart.
  const auto world = distinct_world(o, 41, static_cast<int>(o.domain.product()));
  OraclePolicy policy;
  policy.describer_noise = kNoise;
  GroupOptions group;
  group.max_turns = 3;
  const auto random_specs = group_random(world, 4, static_cast<int>(games), hash_combine(o.seed, 42), group);
  const auto similar_specs = group_by_similarity(world, 4, static_cast<int>(games), hash_combine(o.seed, 43), group);
  const auto random_played = play(world, random_specs, o, policy, quick_options(), hash_combine(o.seed, 44));
  const auto similar_played = play(world, similar_specs, o, policy, quick_options(), hash_combine(o.seed, 45));
  const RatePoint random{"random", games, random_played.raw(), random_played.retention()};
  const RatePoint similar{"similarity", games, similar_played.raw(), similar_played.retention()};
  add_rate_rows(s, {random, similar});
  s.seconds = timer.seconds();
  s.checks.push_back({"similarity-grouped success below random-grouped with 3-sigma separation",
                      separated(random, similar), fmt::format("{} vs {}", pct(similar.raw), pct(random.raw))});
  return s;
}

Section oracle_completeness(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Oracle completeness (noiseless, distinct tuples)";
  s.header = {"N", "Budget", "Games", "Game success", "Filter pass"};
  const std::size_t games = scaled(1'000, o);
  const auto world = distinct_world(o, 51, 256);
  OraclePolicy policy;
  for (int n : {2, 4}) {
    const int log_budget = static_cast<int>(std::ceil(std::log2(n)));
    for (int budget : {log_budget, 3}) {
      if (budget == log_budget && budget == 3) continue;
      GroupOptions group;
      group.max_turns = budget;
      const auto specs = group_random(world, n, static_cast<int>(games), hash_combine(o.seed, 52 + n), group);
      const auto played = play(world, specs, o, policy, quick_options(), hash_combine(o.seed, n));
      const bool complete = played.succeeded == games && played.filtered.retained.size() == games;
      s.rows.push_back({std::to_string(n), std::to_string(budget), std::to_string(games), pct(played.raw()),
                        pct(played.retention())});
      s.checks.push_back({fmt::format("N={} budget {}: 100% success and 100% filter pass", n, budget), complete,
                          fmt::format("{} / {}", pct(played.raw()), pct(played.retention()))});
    }
  }
  s.seconds = timer.seconds();
  return s;
}

bool simulate_game(const synth::WorldGame& game, const OraclePolicy& policy, const synth::DomainSpec& domain,
                   const std::vector<synth::Query>& catalog, Rng& rng) {
  const auto& target = game.images.at(static_cast<std::size_t>(game.target_index - 1));
  synth::ConstraintSet constraints;
  for (int turns = 0;; ++turns) {
    const bool forced = turns >= game.max_turns;
    const auto decision = synth::decide(game.images, constraints, policy, domain, forced, &catalog);
    if (const auto* guess = std::get_if<synth::GuessDecision>(&decision)) {
      return guess->positions[rng.below(guess->positions.size())] == game.target_index;
    }
    const auto& q = std::get<synth::AskDecision>(decision).query;
    const auto answer = synth::oracle_describe(target, synth::render_question(q), domain, policy.describer_noise, rng);
    synth::fold_answer(constraints, q, answer, domain);
  }
}

Section exact_vs_simulated(const BenchOptions& o) {
  Timer timer;
  Section s;
  s.title = "Exact enumeration vs Monte Carlo";
  s.header = {"Fixture", "N", "Budget", "Noise", "Strategy", "Exact", "Simulated", "|diff| / sigma"};
  const std::size_t runs = scaled(50'000, o);
  const auto world = distinct_world(o, 61, 128);
  const auto catalog = synth::query_catalog(o.domain);
  Rng fixture_rng(hash_combine(o.seed, 62));
  for (int f = 0; f < 10; ++f) {
    synth::WorldGame game;
    const int n = 2 + static_cast<int>(fixture_rng.below(3));
    for (const auto i : fixture_rng.sample_indices(world.size(), static_cast<std::size_t>(n))) {
      game.images.push_back(synth::attribute_image(world.records()[i]));
    }
    game.target_index = 1 + static_cast<int>(fixture_rng.below(static_cast<std::uint64_t>(n)));
    game.max_turns = 1 + static_cast<int>(fixture_rng.below(3));
    OraclePolicy policy;
    policy.describer_noise = 0.05 + 0.25 * fixture_rng.uniform01();
    policy.guesser_strategy =
        f % 3 == 2 ? synth::GuesserStrategy::FirstDifference : synth::GuesserStrategy::InfoGainGreedy;

    const double exact = synth::expected_success(game, policy, o.domain);
    Rng rng(hash_combine(o.seed, 100 + static_cast<std::uint64_t>(f)));
    std::size_t hits = 0;
    for (std::size_t r = 0; r < runs; ++r) hits += simulate_game(game, policy, o.domain, catalog, rng);
    const double simulated = static_cast<double>(hits) / static_cast<double>(runs);
    const double sigma = binomial_sigma(exact, runs);
    const double diff = std::abs(simulated - exact);
    const bool ok = sigma == 0.0 ? diff == 0.0 : diff <= 3 * sigma;
    s.rows.push_back({std::to_string(f + 1), std::to_string(n), std::to_string(game.max_turns),
                      fmt::format("{:.3f}", policy.describer_noise), std::string(synth::strategy_name(policy.guesser_strategy)),
                      fmt::format("{:.5f}", exact), fmt::format("{:.5f}", simulated),
                      sigma == 0.0 ? std::string("exact") : fmt::format("{:.2f}", diff / sigma)});
    s.checks.push_back({fmt::format("fixture {} within 3 sigma", f + 1), ok,
                        fmt::format("exact {:.5f}, simulated {:.5f}", exact, simulated)});
  }
  s.seconds = timer.seconds();
  return s;
}

std::vector<Section> run_all(const BenchOptions& options) {
  return {chance_rate(options),      filter_soundness(options),    difficulty_trend(options),
          grouping_trend(options),   oracle_completeness(options), exact_vs_simulated(options)};
}

std::string render(const Section& section) {
  std::string out = fmt::format("{} ({:.1f}s)\n", section.title, section.seconds);
  out += render_table(section.header, section.rows);
  for (const auto& c : section.checks) {
    out += fmt::format("  [{}] {}{}\n", c.passed ? "pass" : "FAIL", c.name, c.detail.empty() ? "" : ": " + c.detail);
  }
  return out;
}

}  // namespace dialog_forge::bench
