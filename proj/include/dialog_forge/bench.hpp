#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialog_forge/synthetic_world.hpp"

namespace dialog_forge::bench {

struct BenchOptions {
  std::uint64_t seed = 1;
  /// Multiplies every game count; 1.0 is the full suite.
  double scale = 1.0;
  int concurrency = 1;
  synth::DomainSpec domain;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Section {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<Check> checks;
  double seconds = 0.0;
};

/// Binomial standard error of a rate measured over n trials.
double binomial_sigma(double p, std::size_t n) noexcept;

/// Uniform-random Guesser at N=4: raw success and post-filter retention
/// against 1/N and (1/N)^N.
Section chance_rate(const BenchOptions& options);
/// Every retained dialog re-validates and comes from a successful game.
Section filter_soundness(const BenchOptions& options);
/// Success at N in {2,4,8}, noise 0.1, budget 3.
Section difficulty_trend(const BenchOptions& options);
/// Similarity-grouped versus random-grouped games at N=4, noise 0.1.
Section grouping_trend(const BenchOptions& options);
/// Noiseless distinct-tuple games at N in {2,4}.
Section oracle_completeness(const BenchOptions& options);
/// expected_success against a Monte Carlo simulation on randomized fixtures.
Section exact_vs_simulated(const BenchOptions& options);

std::vector<Section> run_all(const BenchOptions& options);

/// One Monte Carlo run of the oracle game: truthful summaries, noisy answers.
bool simulate_game(const synth::WorldGame& game, const synth::OraclePolicy& policy, const synth::DomainSpec& domain,
                   const std::vector<synth::Query>& catalog, Rng& rng);

std::string render(const Section& section);

}  // namespace dialog_forge::bench
