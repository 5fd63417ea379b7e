#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "dialog_forge/agent.hpp"
#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge::synth {

/// Declared in lexicographic order of their names; that order breaks ties.
enum class Attribute { BackgroundColor, Count, ObjectColor, Shape };
inline constexpr Attribute kAttributes[] = {Attribute::BackgroundColor, Attribute::Count, Attribute::ObjectColor,
                                            Attribute::Shape};

std::string_view attribute_name(Attribute a) noexcept;

struct DomainSpec {
  std::vector<std::string> background_colors{"orange", "blue", "white", "green"};
  std::vector<std::string> object_colors{"orange", "blue", "white", "green"};
  std::vector<std::string> shapes{"square", "circle", "triangle"};
  std::vector<int> counts{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};

  /// Throws InvalidConfig on empty domains, duplicates, or shapes that collide
  /// with object colors (the binary "Are the objects X?" form must be unambiguous).
  void validate() const;
  std::uint64_t product() const noexcept;
  /// Domain values of `a` as answer strings.
  std::vector<std::string> values(Attribute a) const;
  /// Length of the one-hot encoding.
  std::size_t one_hot_dim() const noexcept;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

struct AttributeImage {
  std::string image_id;
  std::string background_color;
  std::string object_color;
  std::string shape;
  int count = 1;

  std::string value(Attribute a) const;
  friend bool operator==(const AttributeImage&, const AttributeImage&) = default;
};

/// Reads the four attributes from a corpus record. Throws ParseError.
AttributeImage attribute_image(const ImageRecord& record);

struct WorldSpec {
  DomainSpec domains;
  int n_images = 64;
  bool distinct = true;
  std::uint64_t seed = 0;
};

WorldSpec load_world_spec(const std::filesystem::path& path);
WorldSpec world_spec_from_json(std::string_view json);

/// Deterministic under seed. Records carry attributes, a one-hot embedding and
/// `synth://<id>` content refs. Throws DomainExhausted when more distinct
/// tuples are requested than the domain holds.
Corpus gen_world(std::uint64_t seed, int n_images, const DomainSpec& domain, bool distinct = true,
                 std::string corpus_id = "synthetic");

Eigen::VectorXd one_hot(const AttributeImage& image, const DomainSpec& domain);

// ---------------------------------------------------------------------------
// Question grammar

enum class QueryKind { Value, Binary };

struct Query {
  Attribute attribute = Attribute::Count;
  QueryKind kind = QueryKind::Value;
  std::string value;  // Binary only
  friend bool operator==(const Query&, const Query&) = default;
};

std::string render_question(const Query& q);
/// nullopt when the question is outside the grammar.
std::optional<Query> parse_question(std::string_view question, const DomainSpec& domain);
/// Every query in tie-break order: attributes lexicographically, the value
/// query of an attribute before its binary queries (domain order).
std::vector<Query> query_catalog(const DomainSpec& domain);

/// Noiseless answer of `image` to `q`: the value, or "yes"/"no".
std::string true_answer(const AttributeImage& image, const Query& q);
/// Every syntactically valid answer to `q`.
std::vector<std::string> answer_space(const Query& q, const DomainSpec& domain);

struct Constraint {
  Attribute attribute = Attribute::Count;
  std::string value;
  bool equal = true;
  friend bool operator==(const Constraint&, const Constraint&) = default;
};

using ConstraintSet = std::vector<Constraint>;

bool satisfies(const AttributeImage& image, const ConstraintSet& constraints);
/// Appends the constraint implied by (q, answer) unless already present.
/// Returns false when the answer is not interpretable.
bool fold_answer(ConstraintSet& constraints, const Query& q, std::string_view answer, const DomainSpec& domain);

/// Canonical summary text; parse_summary inverts it and ignores sentences it
/// does not recognise.
std::string render_summary(const ConstraintSet& constraints);
ConstraintSet parse_summary(std::string_view summary, const DomainSpec& domain);

// ---------------------------------------------------------------------------
// Oracle agents

enum class GuesserStrategy { InfoGainGreedy, UniformRandomGuess, FirstDifference };

std::string_view strategy_name(GuesserStrategy s) noexcept;
std::optional<GuesserStrategy> parse_strategy(std::string_view name) noexcept;

struct OraclePolicy {
  double describer_noise = 0.0;  // probability of a uniformly random wrong answer
  GuesserStrategy guesser_strategy = GuesserStrategy::InfoGainGreedy;
  /// Ask instead of guessing while the summary is empty, as the Guesser prompt demands.
  bool respect_empty_summary = true;

  void validate() const;
};

/// Truthful with probability 1 - noise. Throws UnrecognizedQuestion.
std::string oracle_describe(const AttributeImage& image, std::string_view question, const DomainSpec& domain,
                            double noise, Rng& rng);

struct AskDecision {
  Query query;
};
/// Uniform choice over 1-based positions; a single position is a
/// deterministic guess.
struct GuessDecision {
  std::vector<int> positions;
};
using GuesserDecision = std::variant<AskDecision, GuessDecision>;

/// Deterministic part of the Guesser policy: what to ask, or which positions
/// to guess among.
GuesserDecision decide(std::span<const AttributeImage> images, const ConstraintSet& constraints,
                       const OraclePolicy& policy, const DomainSpec& domain, bool forced,
                       const std::vector<Query>* catalog = nullptr);

GuesserAction oracle_guess_step(std::span<const AttributeImage> images, const ConstraintSet& constraints,
                                const OraclePolicy& policy, const DomainSpec& domain, bool forced, Rng& rng);

/// Partition entropy (nats) of the candidate set under `q`.
double partition_entropy(std::span<const AttributeImage* const> candidates, const Query& q);

struct WorldGame {
  std::vector<AttributeImage> images;  // in Guesser order
  int target_index = 1;
  int max_turns = 3;
};

struct EnumerationOptions {
  std::size_t node_cap = 2'000'000;
};

/// Exact success probability of the game under `policy`, by enumerating
/// every Describer answer branch. Throws TreeTooLarge past the node cap.
double expected_success(const WorldGame& game, const OraclePolicy& policy, const DomainSpec& domain,
                        const EnumerationOptions& options = {});

/// In-process backend playing any role against the attribute world.
/// Guesser randomness is keyed by what the Guesser sees (game seed, image
/// order, summary), so a replay of the same view repeats its choice.
/// Describer noise is keyed by the call sequence when sampling (temperature
/// > 0) and by the prompt content at temperature 0.
class SyntheticOracleBackend final : public AgentBackend {
 public:
  SyntheticOracleBackend(const Corpus& world, DomainSpec domain, OraclePolicy policy, std::uint64_t seed = 0);

  std::string complete(const PromptPayload& payload, const InvocationContext& ctx) override;
  std::string describe() const override;

  const DomainSpec& domain() const noexcept { return domain_; }

 private:
  const AttributeImage& resolve(const ImageRef& ref) const;

  std::unordered_map<std::string, AttributeImage> by_ref_;
  DomainSpec domain_;
  OraclePolicy policy_;
  std::uint64_t seed_;
  std::vector<Query> catalog_;
};

}  // namespace dialog_forge::synth
