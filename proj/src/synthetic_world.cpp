#include "dialog_forge/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/error.hpp"

namespace dialog_forge::synth {

std::string_view attribute_name(Attribute a) noexcept {
  switch (a) {
    case Attribute::BackgroundColor: return "background_color";
    case Attribute::Count: return "count";
    case Attribute::ObjectColor: return "object_color";
    case Attribute::Shape: return "shape";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Domains and worlds

namespace {

template <typename T>
bool has_duplicates(const std::vector<T>& v) {
  return std::set<T>(v.begin(), v.end()).size() != v.size();
}

template <typename T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::string normalized_token(std::string_view s) {
  std::string out = text::to_lower(text::trim(s));
  while (!out.empty() && (out.back() == '.' || out.back() == '!' || out.back() == '?' || out.back() == ',')) {
    out.pop_back();
  }
  return text::trim(out);
}

}  // namespace

void DomainSpec::validate() const {
  if (background_colors.empty() || object_colors.empty() || shapes.empty() || counts.empty()) {
    throw Error(ErrorKind::InvalidConfig, "every attribute domain must be non-empty");
  }
  if (has_duplicates(background_colors) || has_duplicates(object_colors) || has_duplicates(shapes) ||
      has_duplicates(counts)) {
    throw Error(ErrorKind::InvalidConfig, "attribute domains must not repeat values");
  }
  for (const auto& s : shapes) {
    if (contains(object_colors, s) || contains(object_colors, s + "s")) {
      throw Error(ErrorKind::InvalidConfig, fmt::format("shape `{}` collides with an object color", s));
    }
  }
  for (int c : counts) {
    if (c < 0) throw Error(ErrorKind::InvalidConfig, "counts must be non-negative");
  }
}

std::uint64_t DomainSpec::product() const noexcept {
  return static_cast<std::uint64_t>(background_colors.size()) * object_colors.size() * shapes.size() * counts.size();
}

std::vector<std::string> DomainSpec::values(Attribute a) const {
  switch (a) {
    case Attribute::BackgroundColor: return background_colors;
    case Attribute::ObjectColor: return object_colors;
    case Attribute::Shape: return shapes;
    case Attribute::Count: {
      std::vector<std::string> out;
      for (int c : counts) out.push_back(std::to_string(c));
      return out;
    }
  }
  return {};
}

std::size_t DomainSpec::one_hot_dim() const noexcept {
  return background_colors.size() + object_colors.size() + shapes.size() + counts.size();
}

std::string AttributeImage::value(Attribute a) const {
  switch (a) {
    case Attribute::BackgroundColor: return background_color;
    case Attribute::ObjectColor: return object_color;
    case Attribute::Shape: return shape;
    case Attribute::Count: return std::to_string(count);
  }
  return {};
}

AttributeImage attribute_image(const ImageRecord& record) {
  auto get = [&](const char* key) -> const std::string& {
    const auto it = record.attributes.find(key);
    if (it == record.attributes.end()) {
      throw Error(ErrorKind::ParseError, fmt::format("`{}` lacks attribute `{}`", record.image_id, key));
    }
    return it->second;
  };
  AttributeImage image;
  image.image_id = record.image_id;
  image.background_color = get("background_color");
  image.object_color = get("object_color");
  image.shape = get("shape");
  try {
    image.count = std::stoi(get("count"));
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, fmt::format("`{}` has a non-integer count", record.image_id));
  }
  return image;
}

WorldSpec world_spec_from_json(std::string_view json) {
  const auto j = nlohmann::json::parse(json, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ParseError, "world spec is not a JSON object");
  WorldSpec spec;
  try {
    if (j.contains("domains")) {
      const auto& d = j["domains"];
      for (const auto& [key, value] : d.items()) {
        if (key != "background_color" && key != "object_color" && key != "shape" && key != "count") {
          throw Error(ErrorKind::ParseError, "world spec: unknown domain `" + key + "`");
        }
      }
      if (d.contains("background_color")) spec.domains.background_colors = d["background_color"].get<std::vector<std::string>>();
      if (d.contains("object_color")) spec.domains.object_colors = d["object_color"].get<std::vector<std::string>>();
      if (d.contains("shape")) spec.domains.shapes = d["shape"].get<std::vector<std::string>>();
      if (d.contains("count")) spec.domains.counts = d["count"].get<std::vector<int>>();
    }
    spec.n_images = j.value("n_images", spec.n_images);
    spec.distinct = j.value("distinct", spec.distinct);
    spec.seed = j.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("world spec: ") + e.what());
  }
  spec.domains.validate();
  return spec;
}

WorldSpec load_world_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open world spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return world_spec_from_json(ss.str());
}

Eigen::VectorXd one_hot(const AttributeImage& image, const DomainSpec& domain) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.one_hot_dim()));
  Eigen::Index offset = 0;
  for (Attribute a : {Attribute::BackgroundColor, Attribute::ObjectColor, Attribute::Shape, Attribute::Count}) {
    const auto values = domain.values(a);
    const auto it = std::find(values.begin(), values.end(), image.value(a));
    if (it != values.end()) v[offset + (it - values.begin())] = 1.0;
    offset += static_cast<Eigen::Index>(values.size());
  }
  return v;
}

Corpus gen_world(std::uint64_t seed, int n_images, const DomainSpec& domain, bool distinct, std::string corpus_id) {
  domain.validate();
  if (n_images < 1) throw Error(ErrorKind::InvalidConfig, "n_images must be at least 1");
  const std::uint64_t product = domain.product();
  if (distinct && static_cast<std::uint64_t>(n_images) > product) {
    throw Error(ErrorKind::DomainExhausted,
                fmt::format("{} distinct tuples requested from a {}-tuple domain", n_images, product));
  }
  Rng rng(seed);
  std::vector<std::uint64_t> codes;
  if (distinct) {
    if (product <= 10'000'000) {
      for (auto idx : rng.sample_indices(static_cast<std::size_t>(product), static_cast<std::size_t>(n_images))) {
        codes.push_back(idx);
      }
    } else {
      std::set<std::uint64_t> seen;
      while (codes.size() < static_cast<std::size_t>(n_images)) {
        const auto c = rng.below(product);
        if (seen.insert(c).second) codes.push_back(c);
      }
    }
  } else {
    for (int i = 0; i < n_images; ++i) codes.push_back(rng.below(product));
  }

  std::vector<ImageRecord> records;
  records.reserve(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::uint64_t c = codes[i];
    AttributeImage image;
    image.image_id = fmt::format("img-{:05d}", i);
    image.count = domain.counts[c % domain.counts.size()];
    c /= domain.counts.size();
    image.shape = domain.shapes[c % domain.shapes.size()];
    c /= domain.shapes.size();
    image.object_color = domain.object_colors[c % domain.object_colors.size()];
    c /= domain.object_colors.size();
    image.background_color = domain.background_colors[c % domain.background_colors.size()];

    ImageRecord r;
    r.image_id = image.image_id;
    r.content_ref = "synth://" + image.image_id;
    r.embedding = one_hot(image, domain);
    for (Attribute a : kAttributes) r.attributes[std::string(attribute_name(a))] = image.value(a);
    records.push_back(std::move(r));
  }
  return Corpus(std::move(corpus_id), std::move(records),
                fmt::format("synthetic attribute world (seed {}, distinct={})", seed, distinct));
}

// ---------------------------------------------------------------------------
// Question grammar

std::string render_question(const Query& q) {
  if (q.kind == QueryKind::Value) {
    switch (q.attribute) {
      case Attribute::Count: return "How many objects can you see?";
      case Attribute::Shape: return "What shape are the objects?";
      case Attribute::ObjectColor: return "What color are the objects?";
      case Attribute::BackgroundColor: return "What color is the background?";
    }
  }
  switch (q.attribute) {
    case Attribute::Count: return fmt::format("Are there {} objects?", q.value);
    case Attribute::Shape: return fmt::format("Are the objects {}s?", q.value);
    case Attribute::ObjectColor: return fmt::format("Are the objects {}?", q.value);
    case Attribute::BackgroundColor: return fmt::format("Is the background {}?", q.value);
  }
  return {};
}

std::optional<Query> parse_question(std::string_view question, const DomainSpec& domain) {
  const std::string q = normalized_token(question);
  if (q == "how many objects can you see" || q == "how many objects are there") {
    return Query{Attribute::Count, QueryKind::Value, {}};
  }
  if (q == "what shape are the objects") return Query{Attribute::Shape, QueryKind::Value, {}};
  if (q == "what color are the objects" || q == "what colour are the objects") {
    return Query{Attribute::ObjectColor, QueryKind::Value, {}};
  }
  if (q == "what color is the background" || q == "what colour is the background") {
    return Query{Attribute::BackgroundColor, QueryKind::Value, {}};
  }
  auto tail = [&](std::string_view prefix, std::string_view suffix = {}) -> std::optional<std::string> {
    if (!q.starts_with(prefix) || !std::string_view(q).ends_with(suffix)) return std::nullopt;
    if (q.size() < prefix.size() + suffix.size()) return std::nullopt;
    return text::trim(std::string_view(q).substr(prefix.size(), q.size() - prefix.size() - suffix.size()));
  };
  if (auto v = tail("are there ", " objects")) {
    if (contains(domain.values(Attribute::Count), *v)) return Query{Attribute::Count, QueryKind::Binary, *v};
    return std::nullopt;
  }
  if (auto v = tail("are the objects ")) {
    if (contains(domain.shapes, *v)) return Query{Attribute::Shape, QueryKind::Binary, *v};
    if (v->size() > 1 && v->back() == 's' && contains(domain.shapes, v->substr(0, v->size() - 1))) {
      return Query{Attribute::Shape, QueryKind::Binary, v->substr(0, v->size() - 1)};
    }
    if (contains(domain.object_colors, *v)) return Query{Attribute::ObjectColor, QueryKind::Binary, *v};
    return std::nullopt;
  }
  if (auto v = tail("is the background ")) {
    if (contains(domain.background_colors, *v)) return Query{Attribute::BackgroundColor, QueryKind::Binary, *v};
  }
  return std::nullopt;
}

std::vector<Query> query_catalog(const DomainSpec& domain) {
  std::vector<Query> out;
  for (Attribute a : kAttributes) {
    out.push_back(Query{a, QueryKind::Value, {}});
    for (const auto& v : domain.values(a)) out.push_back(Query{a, QueryKind::Binary, v});
  }
  return out;
}

std::string true_answer(const AttributeImage& image, const Query& q) {
  const std::string actual = image.value(q.attribute);
  if (q.kind == QueryKind::Value) return actual;
  return actual == q.value ? "yes" : "no";
}

std::vector<std::string> answer_space(const Query& q, const DomainSpec& domain) {
  if (q.kind == QueryKind::Binary) return {"yes", "no"};
  return domain.values(q.attribute);
}

bool satisfies(const AttributeImage& image, const ConstraintSet& constraints) {
  for (const auto& c : constraints) {
    if ((image.value(c.attribute) == c.value) != c.equal) return false;
  }
  return true;
}

bool fold_answer(ConstraintSet& constraints, const Query& q, std::string_view answer, const DomainSpec& domain) {
  std::string a = normalized_token(answer);
  Constraint c{q.attribute, {}, true};
  if (q.kind == QueryKind::Value) {
    auto values = domain.values(q.attribute);
    if (q.attribute == Attribute::Shape && !contains(values, a) && a.size() > 1 && a.back() == 's') a.pop_back();
    if (!contains(values, a)) return false;
    c.value = a;
  } else {
    const auto first = a.substr(0, a.find_first_of(" ,"));
    if (first == "yes") {
      c.equal = true;
    } else if (first == "no") {
      c.equal = false;
    } else {
      return false;
    }
    c.value = q.value;
  }
  if (!contains(constraints, c)) constraints.push_back(std::move(c));
  return true;
}

namespace {

std::string_view summary_phrase(Attribute a) noexcept {
  switch (a) {
    case Attribute::BackgroundColor: return "background color";
    case Attribute::Count: return "object count";
    case Attribute::ObjectColor: return "object color";
    case Attribute::Shape: return "object shape";
  }
  return "";
}

}  // namespace

std::string render_summary(const ConstraintSet& constraints) {
  std::string out;
  for (const auto& c : constraints) {
    if (!out.empty()) out += ' ';
    out += fmt::format("The {} is {}{}.", summary_phrase(c.attribute), c.equal ? "" : "not ", c.value);
  }
  return out;
}

ConstraintSet parse_summary(std::string_view summary, const DomainSpec& domain) {
  ConstraintSet out;
  std::size_t start = 0;
  while (start < summary.size()) {
    auto end = summary.find('.', start);
    if (end == std::string_view::npos) end = summary.size();
    const std::string sentence = text::to_lower(text::trim(summary.substr(start, end - start)));
    start = end + 1;
    for (Attribute a : kAttributes) {
      const std::string prefix = fmt::format("the {} is ", summary_phrase(a));
      if (!sentence.starts_with(prefix)) continue;
      std::string_view rest = std::string_view(sentence).substr(prefix.size());
      Constraint c{a, {}, true};
      if (rest.starts_with("not ")) {
        c.equal = false;
        rest.remove_prefix(4);
      }
      c.value = text::trim(rest);
      if (contains(domain.values(a), c.value) && !contains(out, c)) out.push_back(std::move(c));
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

std::string_view strategy_name(GuesserStrategy s) noexcept {
  switch (s) {
    case GuesserStrategy::InfoGainGreedy: return "info_gain_greedy";
    case GuesserStrategy::UniformRandomGuess: return "uniform_random_guess";
    case GuesserStrategy::FirstDifference: return "first_difference";
  }
  return "";
}

std::optional<GuesserStrategy> parse_strategy(std::string_view name) noexcept {
  for (auto s : {GuesserStrategy::InfoGainGreedy, GuesserStrategy::UniformRandomGuess, GuesserStrategy::FirstDifference}) {
    if (strategy_name(s) == name) return s;
  }
  return std::nullopt;
}

void OraclePolicy::validate() const {
  if (!(describer_noise >= 0.0 && describer_noise <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "describer noise must lie in [0, 1]");
  }
}

std::string oracle_describe(const AttributeImage& image, std::string_view question, const DomainSpec& domain,
                            double noise, Rng& rng) {
  const auto q = parse_question(question, domain);
  if (!q) throw Error(ErrorKind::UnrecognizedQuestion, fmt::format("`{}`", question));
  const std::string truth = true_answer(image, *q);
  if (noise > 0.0 && rng.bernoulli(noise)) {
    std::vector<std::string> wrong;
    for (auto& a : answer_space(*q, domain)) {
      if (a != truth) wrong.push_back(std::move(a));
    }
    if (!wrong.empty()) return wrong[rng.below(wrong.size())];
  }
  return truth;
}

double partition_entropy(std::span<const AttributeImage* const> candidates, const Query& q) {
  std::vector<std::pair<std::string, int>> buckets;
  for (const auto* image : candidates) {
    const std::string a = true_answer(*image, q);
    auto it = std::find_if(buckets.begin(), buckets.end(), [&](const auto& b) { return b.first == a; });
    if (it == buckets.end()) {
      buckets.emplace_back(a, 1);
    } else {
      ++it->second;
    }
  }
  const double total = static_cast<double>(candidates.size());
  double h = 0.0;
  for (const auto& [answer, n] : buckets) {
    const double p = n / total;
    h -= p * std::log(p);
  }
  return h;
}

GuesserDecision decide(std::span<const AttributeImage> images, const ConstraintSet& constraints,
                       const OraclePolicy& policy, const DomainSpec& domain, bool forced,
                       const std::vector<Query>* catalog) {
  const int n = static_cast<int>(images.size());
  auto all_positions = [&] {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i + 1;
    return p;
  };
  if (policy.guesser_strategy == GuesserStrategy::UniformRandomGuess) return GuessDecision{all_positions()};

  std::vector<int> positions;
  std::vector<const AttributeImage*> candidates;
  for (int i = 0; i < n; ++i) {
    if (satisfies(images[static_cast<std::size_t>(i)], constraints)) {
      positions.push_back(i + 1);
      candidates.push_back(&images[static_cast<std::size_t>(i)]);
    }
  }
  if (forced) return GuessDecision{positions.empty() ? all_positions() : positions};
  if (positions.empty()) return GuessDecision{all_positions()};

  std::vector<Query> local;
  if (!catalog) {
    local = query_catalog(domain);
    catalog = &local;
  }
  const bool must_ask = policy.respect_empty_summary && constraints.empty();

  if (positions.size() > 1) {
    if (policy.guesser_strategy == GuesserStrategy::FirstDifference) {
      for (Attribute a : {Attribute::BackgroundColor, Attribute::ObjectColor, Attribute::Shape, Attribute::Count}) {
        const std::string first = candidates.front()->value(a);
        const bool differs = std::any_of(candidates.begin(), candidates.end(),
                                         [&](const AttributeImage* c) { return c->value(a) != first; });
        if (differs) return AskDecision{Query{a, QueryKind::Value, {}}};
      }
    } else {
      constexpr double kTieTolerance = 1e-12;
      const Query* best = nullptr;
      double best_h = 0.0;
      for (const auto& q : *catalog) {
        const double h = partition_entropy(candidates, q);
        if (h > best_h + kTieTolerance) {
          best = &q;
          best_h = h;
        }
      }
      if (best) return AskDecision{*best};
    }
  }
  // Nothing left to learn (one candidate, or indistinguishable candidates).
  if (must_ask) return AskDecision{catalog->front()};
  return GuessDecision{positions};
}

GuesserAction oracle_guess_step(std::span<const AttributeImage> images, const ConstraintSet& constraints,
                                const OraclePolicy& policy, const DomainSpec& domain, bool forced, Rng& rng) {
  auto decision = decide(images, constraints, policy, domain, forced);
  if (auto* ask = std::get_if<AskDecision>(&decision)) return Question{render_question(ask->query)};
  const auto& positions = std::get<GuessDecision>(decision).positions;
  return Guess{positions[rng.below(positions.size())]};
}

namespace {

struct Enumerator {
  const WorldGame& game;
  const OraclePolicy& policy;
  const DomainSpec& domain;
  std::vector<Query> catalog;
  std::size_t cap;
  std::size_t nodes = 0;

  double visit(const ConstraintSet& constraints, int turns_used) {
    if (++nodes > cap) {
      throw Error(ErrorKind::TreeTooLarge, fmt::format("outcome tree exceeds {} nodes", cap));
    }
    const bool forced = turns_used >= game.max_turns;
    const auto decision = decide(game.images, constraints, policy, domain, forced, &catalog);
    if (const auto* guess = std::get_if<GuessDecision>(&decision)) {
      const auto hits = std::count(guess->positions.begin(), guess->positions.end(), game.target_index);
      return static_cast<double>(hits) / static_cast<double>(guess->positions.size());
    }
    const Query& q = std::get<AskDecision>(decision).query;
    const auto& target = game.images.at(static_cast<std::size_t>(game.target_index - 1));
    const std::string truth = true_answer(target, q);
    std::vector<std::string> wrong;
    for (auto& a : answer_space(q, domain)) {
      if (a != truth) wrong.push_back(std::move(a));
    }
    const double eps = wrong.empty() ? 0.0 : policy.describer_noise;
    double p = 0.0;
    auto branch = [&](const std::string& answer, double weight) {
      if (weight == 0.0) return;
      ConstraintSet next = constraints;
      fold_answer(next, q, answer, domain);
      p += weight * visit(next, turns_used + 1);
    };
    branch(truth, 1.0 - eps);
    for (const auto& w : wrong) branch(w, eps / static_cast<double>(wrong.size()));
    return p;
  }
};

}  // namespace

double expected_success(const WorldGame& game, const OraclePolicy& policy, const DomainSpec& domain,
                        const EnumerationOptions& options) {
  policy.validate();
  if (game.images.empty() || game.target_index < 1 || static_cast<std::size_t>(game.target_index) > game.images.size()) {
    throw Error(ErrorKind::InvalidSpec, "world game target outside the image list");
  }
  Enumerator e{game, policy, domain, query_catalog(domain), options.node_cap};
  return e.visit({}, 0);
}

// ---------------------------------------------------------------------------
// Backend

namespace {

std::optional<std::string_view> line_value(std::string_view text, std::string_view prefix, bool last) {
  std::optional<std::string_view> found;
  for (auto line : text::split_lines(text)) {
    if (line.starts_with(prefix)) {
      found = line.substr(prefix.size());
      if (!last) break;
    }
  }
  return found;
}

std::string ref_key(const ImageRef& ref) {
  if (const auto* uri = std::get_if<UriImage>(&ref)) return uri->uri;
  return std::get<InlineImage>(ref).b64;
}

}  // namespace

SyntheticOracleBackend::SyntheticOracleBackend(const Corpus& world, DomainSpec domain, OraclePolicy policy,
                                               std::uint64_t seed)
    : domain_(std::move(domain)), policy_(policy), seed_(seed), catalog_(query_catalog(domain_)) {
  domain_.validate();
  policy_.validate();
  for (const auto& r : world.records()) {
    auto image = attribute_image(r);
    by_ref_.emplace(r.content_ref, image);
    by_ref_.emplace(r.image_id, std::move(image));
  }
}

std::string SyntheticOracleBackend::describe() const {
  return fmt::format("synthetic:{}:eps={}", strategy_name(policy_.guesser_strategy), policy_.describer_noise);
}

const AttributeImage& SyntheticOracleBackend::resolve(const ImageRef& ref) const {
  const auto it = by_ref_.find(ref_key(ref));
  if (it == by_ref_.end()) throw Error(ErrorKind::CorpusMiss, "oracle cannot resolve image `" + ref_key(ref) + "`");
  return it->second;
}

std::string SyntheticOracleBackend::complete(const PromptPayload& payload, const InvocationContext& ctx) {
  auto sampling_rng = [&] {
    if (payload.sampling.temperature > 0.0) return Rng(hash_combine(hash_combine(seed_, ctx.seed), ctx.call_seq));
    std::string key = payload.text;
    for (const auto& img : payload.images) key += '\x1f' + ref_key(img);
    return Rng(hash_combine(hash_combine(seed_, ctx.seed), stable_hash(key)));
  };
  auto require_image = [&]() -> const AttributeImage& {
    if (payload.images.size() != 1) throw Error(ErrorKind::InvalidPayload, "expected exactly one image");
    return resolve(payload.images.front());
  };

  switch (payload.role) {
    case Role::Describer:
    case Role::SelfQAAnswer:
    case Role::SuccessDetection: {
      const auto& image = require_image();
      const auto question = line_value(payload.text, "Question: ", true);
      if (!question) throw Error(ErrorKind::InvalidPayload, "prompt has no question line");
      Rng rng = sampling_rng();
      return oracle_describe(image, *question, domain_, policy_.describer_noise, rng);
    }
    case Role::GuesserTurn: {
      const std::string summary(line_value(payload.text, "Image description: ", false).value_or(""));
      std::vector<AttributeImage> images;
      images.reserve(payload.images.size());
      std::string view_key = summary;
      for (const auto& ref : payload.images) {
        images.push_back(resolve(ref));
        view_key += '\x1f' + ref_key(ref);
      }
      const bool forced = payload.text.find(kForcedGuessInstruction) != std::string::npos;
      const auto constraints = parse_summary(summary, domain_);
      auto decision = decide(images, constraints, policy_, domain_, forced, &catalog_);
      if (auto* ask = std::get_if<AskDecision>(&decision)) return format_action(Question{render_question(ask->query)});
      const auto& positions = std::get<GuessDecision>(decision).positions;
      Rng rng(hash_combine(hash_combine(seed_, ctx.seed), stable_hash(view_key)));
      return format_action(Guess{positions[rng.below(positions.size())]});
    }
    case Role::GuesserSummary: {
      const auto description = line_value(payload.text, "Description: ", false).value_or("");
      const auto question = line_value(payload.text, "Question: ", true).value_or("");
      const auto answer = line_value(payload.text, "Answer: ", true).value_or("");
      auto constraints = parse_summary(description, domain_);
      if (const auto q = parse_question(question, domain_)) fold_answer(constraints, *q, answer, domain_);
      std::string summary = render_summary(constraints);
      return summary.empty() ? std::string("Nothing is known about the target image yet.") : summary;
    }
    case Role::SelfQAQuestion: {
      require_image();
      Rng rng = sampling_rng();
      std::vector<const Query*> binary;
      for (const auto& q : catalog_) {
        if (q.kind == QueryKind::Binary) binary.push_back(&q);
      }
      return "Question: " + render_question(*binary[rng.below(binary.size())]);
    }
    case Role::Embedding: {
      const auto v = one_hot(require_image(), domain_);
      return nlohmann::json(std::vector<double>(v.begin(), v.end())).dump();
    }
    case Role::YesNoJudge: break;
  }
  throw Error(ErrorKind::InvalidPayload, fmt::format("oracle does not serve role {}", role_name(payload.role)));
}

}  // namespace dialog_forge::synth
