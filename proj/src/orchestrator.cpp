#include "dialog_forge/orchestrator.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "dialog_forge/dataset.hpp"
#include "dialog_forge/error.hpp"
#include "dialog_forge/eval.hpp"
#include "dialog_forge/filter.hpp"
#include "dialog_forge/game.hpp"
#include "dialog_forge/hashing.hpp"
#include "dialog_forge/parallel.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Stages

std::string_view stage_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::Generate: return "generate";
    case Stage::Filter: return "filter";
    case Stage::Dataset: return "dataset";
    case Stage::FinetuneHook: return "finetune_hook";
    case Stage::EvalGame: return "eval_game";
    case Stage::EvalVqa: return "eval_vqa";
    case Stage::EvalSuccess: return "eval_success";
  }
  return "generate";
}

std::optional<Stage> parse_stage(std::string_view name) noexcept {
  std::string s(name);
  std::replace(s.begin(), s.end(), '-', '_');
  for (Stage st : kStages) {
    if (s == stage_name(st)) return st;
  }
  return std::nullopt;
}

std::vector<Stage> stage_dependencies(Stage stage) {
  switch (stage) {
    case Stage::Generate: return {};
    case Stage::Filter: return {Stage::Generate};
    case Stage::Dataset: return {Stage::Filter};
    case Stage::FinetuneHook: return {Stage::Dataset};
    case Stage::EvalGame: return {Stage::Filter};
    case Stage::EvalVqa: return {};
    case Stage::EvalSuccess: return {};
  }
  return {};
}

namespace {

/// Stages that (transitively) depend on `stage`, `stage` included.
std::vector<Stage> downstream_of(Stage stage) {
  std::set<Stage> closure{stage};
  bool grew = true;
  while (grew) {
    grew = false;
    for (Stage s : kStages) {
      if (closure.count(s)) continue;
      for (Stage d : stage_dependencies(s)) {
        if (closure.count(d)) {
          closure.insert(s);
          grew = true;
          break;
        }
      }
    }
  }
  return {closure.begin(), closure.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

namespace {

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  const auto it = doc.find(key);
  return it == doc.end() || !it->is_object() ? empty : *it;
}

std::string agent_label(const json& agent) {
  if (agent.contains("name")) return agent["name"].get<std::string>();
  const auto kind = agent.value("kind", std::string("?"));
  if (kind == "synthetic") {
    return fmt::format("synthetic({}, eps={})", agent.value("strategy", std::string("info_gain_greedy")),
                       agent.value("noise", 0.0));
  }
  if (kind == "remote") return "remote:" + agent.value("base_uri", std::string());
  if (kind == "scripted") return "scripted:" + fs::path(agent.value("script", std::string())).filename().string();
  return kind;
}

void require_file(const RunConfig& config, const json& holder, const char* key, const char* what) {
  if (!holder.contains(key)) return;
  if (!holder[key].is_string()) return;
  const auto p = config.resolve(holder[key].get<std::string>());
  if (!fs::exists(p)) throw Error(ErrorKind::InvalidConfig, fmt::format("{} `{}` does not exist", what, p.string()));
}

void validate_agent(const RunConfig& config, const json& agent, const std::string& role) {
  if (!agent.is_object()) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "` must be an object");
  const auto kind = agent.value("kind", std::string());
  if (kind == "synthetic") {
    const double noise = agent.value("noise", 0.0);
    if (!(noise >= 0.0 && noise <= 1.0)) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: noise outside [0,1]");
    if (agent.contains("strategy") && !synth::parse_strategy(agent["strategy"].get<std::string>())) {
      throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: unknown strategy");
    }
  } else if (kind == "remote") {
    if (!agent.contains("base_uri")) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: base_uri missing");
    if (agent.value("timeout_ms", 30000) <= 0) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: timeout must be > 0");
    if (agent.value("max_retries", 3) < 0) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: max_retries < 0");
  } else if (kind == "scripted") {
    if (!agent.contains("script")) throw Error(ErrorKind::InvalidConfig, "agent `" + role + "`: script missing");
    require_file(config, agent, "script", "script");
  } else {
    throw Error(ErrorKind::InvalidConfig, fmt::format("agent `{}`: unknown kind `{}`", role, kind));
  }
}

}  // namespace

std::string RunConfig::run_id() const { return doc.value("run_id", std::string("run")); }
int RunConfig::round() const { return doc.value("round", 1); }
std::uint64_t RunConfig::seed() const { return doc.value("seed", std::uint64_t{0}); }
int RunConfig::concurrency() const { return doc.value("concurrency", 1); }

fs::path RunConfig::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate() const {
  if (!doc.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
  if (round() < 1) throw Error(ErrorKind::InvalidConfig, "round must be >= 1");
  if (concurrency() < 1) throw Error(ErrorKind::InvalidConfig, "concurrency must be >= 1");
  if (doc.value("max_turns", 3) < 1) throw Error(ErrorKind::InvalidConfig, "max_turns must be >= 1");

  const auto& corpus = section(doc, "corpus");
  if (!corpus.contains("manifest") && !corpus.contains("world")) {
    throw Error(ErrorKind::InvalidConfig, "corpus needs `manifest` or `world`");
  }
  require_file(*this, corpus, "manifest", "corpus manifest");
  require_file(*this, corpus, "world", "world spec");

  const auto& grouping = section(doc, "grouping");
  const auto strategy = grouping.value("strategy", std::string("random"));
  static const std::set<std::string> strategies{"random", "cluster", "similarity", "episode_frames"};
  if (!strategies.count(strategy)) throw Error(ErrorKind::InvalidConfig, "unknown grouping strategy `" + strategy + "`");
  if (grouping.value("n", 4) < 1 || grouping.value("games", 100) < 0) {
    throw Error(ErrorKind::InvalidConfig, "grouping n must be >= 1 and games >= 0");
  }
  const auto pairing = grouping.value("frame_pairing", std::string("same_episode"));
  if (pairing != "same_episode" && pairing != "same_task") {
    throw Error(ErrorKind::InvalidConfig, "frame_pairing must be same_episode or same_task");
  }

  const auto& agents = section(doc, "agents");
  for (const char* role : {"describer", "guesser"}) {
    if (!agents.contains(role)) throw Error(ErrorKind::InvalidConfig, fmt::format("agents.{} is required", role));
  }
  for (const auto& [role, agent] : agents.items()) validate_agent(*this, agent, role);

  const auto mode = section(doc, "dataset").value("mode", std::string("full"));
  if (!parse_dataset_mode(mode)) throw Error(ErrorKind::InvalidConfig, "unknown dataset mode `" + mode + "`");

  const auto& eval = section(doc, "eval");
  for (const char* key : {"vqa_items", "vqa_corpus", "episodes", "episode_corpus", "lexicon"}) {
    require_file(*this, eval, key, key);
  }
  const auto judge = eval.value("yes_no_judge", std::string("rules"));
  if (judge != "rules" && judge != "agent") throw Error(ErrorKind::InvalidConfig, "yes_no_judge must be rules or agent");
  if (judge == "agent" && !agents.contains("judge")) {
    throw Error(ErrorKind::InvalidConfig, "yes_no_judge = agent needs agents.judge");
  }
  if (doc.contains("finetune_hook")) {
    const auto& hook = doc["finetune_hook"];
    if (!hook.is_object() || !hook.contains("command") || !hook["command"].is_string()) {
      throw Error(ErrorKind::InvalidConfig, "finetune_hook needs a `command` string");
    }
  }
}

std::string RunConfig::snapshot() const {
  json copy = doc;
  copy.erase("output_dir");
  copy["round"] = round();
  return copy.dump();
}

std::string RunConfig::snapshot_hash() const { return sha256_hex(snapshot()); }

RunConfig run_config_from_json(std::string_view text, fs::path base_dir) {
  auto doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorKind::InvalidConfig, "config is not a JSON object");
  return RunConfig{std::move(doc), std::move(base_dir)};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto base = path.parent_path();
  return run_config_from_json(ss.str(), base.empty() ? fs::path(".") : base);
}

synth::DomainSpec config_domain(const RunConfig& config) {
  const auto& corpus = section(config.doc, "corpus");
  if (corpus.contains("world")) {
    const auto& w = corpus["world"];
    return (w.is_string() ? synth::load_world_spec(config.resolve(w.get<std::string>()))
                          : synth::world_spec_from_json(w.dump()))
        .domains;
  }
  if (corpus.contains("domains")) {
    json wrapper{{"domains", corpus["domains"]}};
    return synth::world_spec_from_json(wrapper.dump()).domains;
  }
  return {};
}

Corpus load_config_corpus(const RunConfig& config) {
  const auto& corpus = section(config.doc, "corpus");
  if (corpus.contains("manifest")) {
    ManifestOptions options;
    options.verify_content_refs = corpus.value("verify_content_refs", false);
    return load_manifest(config.resolve(corpus["manifest"].get<std::string>()), options);
  }
  const auto& w = corpus.at("world");
  const auto spec = w.is_string() ? synth::load_world_spec(config.resolve(w.get<std::string>()))
                                  : synth::world_spec_from_json(w.dump());
  return synth::gen_world(spec.seed, spec.n_images, spec.domains, spec.distinct);
}

AgentEndpoint make_endpoint(const json& agent, const std::string& role, const RunConfig& config, const Corpus& world,
                            const BackendWrapper& wrap) {
  validate_agent(config, agent, role);
  const auto kind = agent["kind"].get<std::string>();
  std::shared_ptr<AgentBackend> backend;
  if (kind == "synthetic") {
    synth::OraclePolicy policy;
    policy.describer_noise = agent.value("noise", 0.0);
    policy.guesser_strategy = *synth::parse_strategy(agent.value("strategy", std::string("info_gain_greedy")));
    policy.respect_empty_summary = agent.value("respect_empty_summary", true);
    backend = std::make_shared<synth::SyntheticOracleBackend>(world, config_domain(config), policy,
                                                              hash_combine(config.seed(), stable_hash(role)));
  } else if (kind == "remote") {
    RemoteConfig rc;
    rc.base_uri = agent["base_uri"].get<std::string>();
    rc.auth_env = agent.value("auth_env", std::string());
    rc.timeout = std::chrono::milliseconds(agent.value("timeout_ms", 30000));
    rc.max_retries = agent.value("max_retries", 3);
    rc.rate_limit_per_sec = agent.value("rate_limit_per_sec", 0.0);
    rc.initial_backoff = std::chrono::milliseconds(agent.value("initial_backoff_ms", 200));
    rc.max_backoff = std::chrono::milliseconds(agent.value("max_backoff_ms", 10000));
    backend = std::make_shared<RemoteBackend>(rc);
  } else {
    backend = ScriptedBackend::from_json_file(config.resolve(agent["script"].get<std::string>()).string());
  }
  if (wrap) backend = wrap(role, std::move(backend));
  return AgentEndpoint(agent_label(agent), std::move(backend));
}

Corpus embed_corpus(const Corpus& corpus, const AgentEndpoint& endpoint, int concurrency) {
  std::vector<ImageRecord> records = corpus.records();
  parallel_for(records.size(), concurrency, [&](std::size_t i) {
    auto& r = records[i];
    if (r.embedding) return;
    const auto payload =
        render_prompt(Role::Embedding, {}, {corpus.image_ref(r.image_id)}, SamplingParams::evaluation());
    const auto reply = json::parse(endpoint.invoke(payload, InvocationContext{r.image_id, 0, 0}), nullptr, false);
    if (reply.is_discarded() || !reply.is_array() || reply.empty()) {
      throw Error(ErrorKind::InvalidPayload, "embedding reply for " + r.image_id + " is not a number array");
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(reply.size()));
    for (std::size_t k = 0; k < reply.size(); ++k) {
      if (!reply[k].is_number()) throw Error(ErrorKind::InvalidPayload, "embedding for " + r.image_id + " has non-numbers");
      v[static_cast<Eigen::Index>(k)] = reply[k].get<double>();
    }
    r.embedding = std::move(v);
  });
  return Corpus(corpus.id(), std::move(records), corpus.provenance());
}

// ---------------------------------------------------------------------------
// Ledger

std::string_view to_string(StageStatus s) noexcept {
  switch (s) {
    case StageStatus::Pending: return "pending";
    case StageStatus::Running: return "running";
    case StageStatus::Done: return "done";
    case StageStatus::Failed: return "failed";
    case StageStatus::Skipped: return "skipped";
  }
  return "pending";
}

namespace {

StageStatus parse_status(const std::string& s) {
  for (auto st : {StageStatus::Pending, StageStatus::Running, StageStatus::Done, StageStatus::Failed,
                  StageStatus::Skipped}) {
    if (s == to_string(st)) return st;
  }
  throw Error(ErrorKind::ParseError, "unknown stage status `" + s + "`");
}

}  // namespace

RunLedger::RunLedger() {
  for (Stage s : kStages) stages.emplace(s, StageRecord{});
}

void RunLedger::transition(Stage s, StageStatus to) {
  auto& rec = at(s);
  const StageStatus from = rec.status;
  const bool ok = (from == StageStatus::Pending && to != StageStatus::Pending) ||
                  (from == StageStatus::Running &&
                   (to == StageStatus::Running || to == StageStatus::Done || to == StageStatus::Failed ||
                    to == StageStatus::Skipped)) ||
                  (from == StageStatus::Failed && to == StageStatus::Running);
  if (!ok) {
    throw Error(ErrorKind::InvalidConfig,
                fmt::format("stage {} cannot go from {} to {}", stage_name(s), to_string(from), to_string(to)));
  }
  rec.status = to;
}

std::map<std::string, std::int64_t> RunLedger::totals() const {
  std::map<std::string, std::int64_t> out;
  auto take = [&](Stage s, const char* from, const char* to) {
    const auto& c = at(s).counts;
    if (const auto it = c.find(from); it != c.end()) out[to] = it->second;
  };
  take(Stage::Generate, "games", "games");
  take(Stage::Generate, "dialogs", "dialogs");
  take(Stage::Generate, "succeeded", "succeeded");
  take(Stage::Filter, "retained", "retained");
  take(Stage::Dataset, "total", "examples");
  return out;
}

std::string RunLedger::to_json() const {
  ordered_json j;
  j["run_id"] = run_id;
  j["round"] = round;
  j["config_hash"] = config_hash;
  ordered_json st;
  for (Stage s : kStages) {
    const auto& r = at(s);
    ordered_json jr;
    jr["status"] = to_string(r.status);
    if (!r.started_at.empty()) jr["started_at"] = r.started_at;
    if (!r.finished_at.empty()) jr["finished_at"] = r.finished_at;
    jr["artifacts"] = r.artifacts;
    jr["counts"] = r.counts;
    if (!r.note.empty()) jr["note"] = r.note;
    if (!r.error.empty()) jr["error"] = r.error;
    st[std::string(stage_name(s))] = std::move(jr);
  }
  j["stages"] = std::move(st);
  j["totals"] = totals();
  if (model_endpoint) j["model_endpoint"] = ordered_json::parse(model_endpoint->dump());
  j["overrides"] = overrides;
  j["config"] = ordered_json::parse(config.dump());
  return j.dump(2);
}

RunLedger RunLedger::from_json(std::string_view text) {
  const auto j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ParseError, "ledger is not a JSON object");
  RunLedger l;
  try {
    l.run_id = j.at("run_id").get<std::string>();
    l.round = j.at("round").get<int>();
    l.config_hash = j.at("config_hash").get<std::string>();
    l.config = j.value("config", json::object());
    for (Stage s : kStages) {
      const auto name = std::string(stage_name(s));
      if (!j.at("stages").contains(name)) continue;
      const auto& jr = j["stages"][name];
      auto& r = l.at(s);
      r.status = parse_status(jr.at("status").get<std::string>());
      r.started_at = jr.value("started_at", std::string());
      r.finished_at = jr.value("finished_at", std::string());
      r.artifacts = jr.value("artifacts", std::map<std::string, std::string>{});
      r.counts = jr.value("counts", std::map<std::string, std::int64_t>{});
      r.note = jr.value("note", std::string());
      r.error = jr.value("error", std::string());
    }
    if (j.contains("model_endpoint")) l.model_endpoint = j["model_endpoint"];
    l.overrides = j.value("overrides", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("ledger: ") + e.what());
  }
  return l;
}

std::optional<RunLedger> RunLedger::load(const fs::path& run_dir) {
  const auto path = run_dir / "ledger.json";
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunLedger::save(const fs::path& run_dir) const {
  const auto tmp = run_dir / "ledger.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << to_json() << '\n';
    if (!out.flush()) throw Error(ErrorKind::Io, "short write to " + tmp.string());
  }
  fs::rename(tmp, run_dir / "ledger.json");
}

std::vector<std::string> verify_artifacts(const RunLedger& ledger, const fs::path& run_dir) {
  std::vector<std::string> bad;
  for (Stage s : kStages) {
    for (const auto& [rel, hash] : ledger.at(s).artifacts) {
      const auto p = run_dir / rel;
      if (!fs::exists(p) || sha256_file(p) != hash) bad.push_back(rel);
    }
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Stage execution

namespace {

enum class StageResult { Complete, Incomplete, Skip };

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!text::trim(line).empty()) lines.push_back(std::move(line));
  }
  return lines;
}

void write_text(const fs::path& path, std::string_view body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << body;
  if (!out.flush()) throw Error(ErrorKind::Io, "short write to " + path.string());
}

template <typename T>
std::string jsonl_of(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_jsonl(item);
    out += '\n';
  }
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

class StageRunner {
 public:
  StageRunner(const RunConfig& config, fs::path dir, const StageControl& control, RunLedger& ledger, Clock clock)
      : config_(config), dir_(std::move(dir)), control_(control), ledger_(ledger), clock_(std::move(clock)) {}

  StageResult run(Stage stage, StageRecord& rec) {
    switch (stage) {
      case Stage::Generate: return generate(rec);
      case Stage::Filter: return filter(rec);
      case Stage::Dataset: return dataset(rec);
      case Stage::FinetuneHook: return hook(rec);
      case Stage::EvalGame: return eval_game(rec);
      case Stage::EvalVqa: return eval_vqa(rec);
      case Stage::EvalSuccess: return eval_success(rec);
    }
    return StageResult::Skip;
  }

 private:
  const json& agents() const { return section(config_.doc, "agents"); }

  const Corpus& corpus() {
    if (!corpus_) corpus_ = load_config_corpus(config_);
    return *corpus_;
  }

  AgentEndpoint endpoint(const std::string& role, const Corpus& world) {
    const auto& a = agents();
    const json& agent = a.contains(role) ? a[role] : a.at("describer");
    return make_endpoint(agent, role, config_, world, control_.wrap);
  }

  GameOptions game_options() const {
    const auto& g = section(config_.doc, "game");
    GameOptions o;
    o.parse_retries = g.value("parse_retries", 2);
    o.allow_guess_on_empty_summary = g.value("allow_guess_on_empty_summary", false);
    if (config_.doc.contains("fixed_clock")) o.clock = fixed_clock(config_.doc["fixed_clock"].get<std::string>());
    return o;
  }

  void record(StageRecord& rec, const std::string& rel) { rec.artifacts[rel] = sha256_file(dir_ / rel); }

  std::vector<GameSpec> make_specs() {
    const auto& g = section(config_.doc, "grouping");
    const auto strategy = g.value("strategy", std::string("random"));
    const int n = g.value("n", 4);
    const int games = g.value("games", 100);
    GroupOptions options;
    options.max_turns = config_.doc.value("max_turns", 3);
    const auto seed = config_.seed();
    if (strategy == "cluster") return group_by_cluster(corpus(), n, games, seed, options);
    if (strategy == "similarity") return group_by_similarity(corpus(), n, games, seed, options);
    if (strategy == "episode_frames") {
      const auto pairing = g.value("frame_pairing", std::string("same_episode")) == "same_task"
                               ? FramePairing::SameTask
                               : FramePairing::SameEpisode;
      return group_episode_frames(corpus(), g.value("games_per_task", 1000), seed, pairing, options);
    }
    return group_random(corpus(), n, games, seed, options);
  }

  /// Keeps the complete-line prefix of dialogs.jsonl, truncating a partial
  /// trailing line, and checks it matches the spec order.
  std::size_t recover_prefix(const fs::path& path, const std::vector<GameSpec>& specs) {
    if (!fs::exists(path)) return 0;
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    const auto last_nl = bytes.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != bytes.size()) {
      fs::resize_file(path, keep);
      bytes.resize(keep);
    }
    std::size_t count = 0;
    std::istringstream in(bytes);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      const auto d = dialog_from_json(line);
      if (count >= specs.size() || d.spec.game_id != specs[count].game_id) {
        throw Error(ErrorKind::ArtifactMismatch,
                    fmt::format("dialogs.jsonl line {} is `{}`, not the next spec", count + 1, d.spec.game_id));
      }
      ++count;
    }
    return count;
  }

  StageResult generate(StageRecord& rec) {
    const auto specs_path = dir_ / "specs.jsonl";
    std::vector<GameSpec> specs;
    if (fs::exists(specs_path)) {
      if (const auto it = rec.artifacts.find("specs.jsonl");
          it != rec.artifacts.end() && sha256_file(specs_path) != it->second) {
        throw Error(ErrorKind::ArtifactMismatch, "specs.jsonl changed since it was written");
      }
      for (const auto& line : read_lines(specs_path)) specs.push_back(game_spec_from_json(line));
    } else {
      specs = make_specs();
      write_text(specs_path, jsonl_of(specs));
      record(rec, "specs.jsonl");
      ledger_.save(dir_);
    }

    const auto dialogs_path = dir_ / "dialogs.jsonl";
    const std::size_t done = recover_prefix(dialogs_path, specs);
    std::size_t todo = specs.size() - done;
    if (control_.max_new_items) todo = std::min(todo, *control_.max_new_items);

    if (todo > 0) {
      const auto describer = endpoint("describer", corpus());
      const auto guesser = endpoint("guesser", corpus());
      const auto options = game_options();
      std::ofstream out(dialogs_path, std::ios::binary | std::ios::app);
      if (!out) throw Error(ErrorKind::Io, "cannot append to " + dialogs_path.string());
      std::mutex mutex;
      std::map<std::size_t, std::string> pending;
      std::size_t next = 0;
      parallel_for(todo, config_.concurrency(), [&](std::size_t i) {
        auto line = to_jsonl(run_game(specs[done + i], corpus(), describer, guesser, options));
        std::lock_guard lock(mutex);
        pending.emplace(i, std::move(line));
        // Commit in spec order so the file is always a resumable prefix.
        for (auto it = pending.find(next); it != pending.end(); it = pending.find(next)) {
          out << it->second << '\n';
          out.flush();
          pending.erase(it);
          ++next;
        }
      });
      if (!out) throw Error(ErrorKind::Io, "write to dialogs.jsonl failed");
    }

    const std::size_t written = done + todo;
    rec.counts["games"] = static_cast<std::int64_t>(specs.size());
    rec.counts["dialogs"] = static_cast<std::int64_t>(written);
    if (written < specs.size()) {
      rec.note = fmt::format("interrupted after {} of {} dialogs", written, specs.size());
      return StageResult::Incomplete;
    }
    std::int64_t succeeded = 0, failed = 0, aborted = 0;
    if (fs::exists(dialogs_path)) {
      for (const auto& line : read_lines(dialogs_path)) {
        const auto d = dialog_from_json(line);
        succeeded += d.outcome == Outcome::Success;
        failed += d.outcome == Outcome::Failure;
        aborted += d.outcome == Outcome::Aborted;
      }
    } else {
      write_text(dialogs_path, "");
    }
    rec.counts["succeeded"] = succeeded;
    rec.counts["failed"] = failed;
    rec.counts["aborted"] = aborted;
    rec.note.clear();
    record(rec, "dialogs.jsonl");
    return StageResult::Complete;
  }

  std::vector<DialogRecord> read_dialogs(const char* file) {
    std::vector<DialogRecord> out;
    for (const auto& line : read_lines(dir_ / file)) out.push_back(dialog_from_json(line));
    return out;
  }

  std::vector<ValidationReport> read_reports() {
    std::vector<ValidationReport> out;
    for (const auto& line : read_lines(dir_ / "reports.jsonl")) out.push_back(report_from_json(line));
    return out;
  }

  StageResult filter(StageRecord& rec) {
    const auto dialogs = read_dialogs("dialogs.jsonl");
    const auto guesser = endpoint("guesser", corpus());
    auto options = game_options();
    options.parse_retries = section(config_.doc, "filter").value("parse_retries", options.parse_retries);
    const auto result = filter_corpus(dialogs, corpus(), guesser, options, config_.concurrency());
    write_text(dir_ / "reports.jsonl", jsonl_of(result.reports));
    write_text(dir_ / "retained.jsonl", jsonl_of(result.retained));
    rec.counts["dialogs"] = static_cast<std::int64_t>(dialogs.size());
    rec.counts["succeeded"] = std::count_if(dialogs.begin(), dialogs.end(), [](const auto& d) { return d.succeeded(); });
    rec.counts["retained"] = static_cast<std::int64_t>(result.retained.size());
    rec.counts["rejected"] = static_cast<std::int64_t>(dialogs.size() - result.retained.size());
    record(rec, "reports.jsonl");
    record(rec, "retained.jsonl");
    return StageResult::Complete;
  }

  StageResult dataset(StageRecord& rec) {
    const auto retained = read_dialogs("retained.jsonl");
    const auto reports = read_reports();
    const auto& d = section(config_.doc, "dataset");
    ExtractOptions options;
    options.round_tag = config_.round();
    options.emit_summaries = d.value("emit_summaries", false);
    const auto mode = *parse_dataset_mode(d.value("mode", std::string("full")));
    const auto ds = build_sft_dataset(retained, reports, mode, options);
    const auto hash = write_dataset(ds, dir_ / "dataset.jsonl", corpus_resolver(corpus()));
    write_text(dir_ / "dataset.manifest.json",
               manifest_json(ds, fmt::format("{}/round-{}", config_.run_id(), config_.round()), hash) + "\n");
    for (const auto& [name, n] : ds.counts.per_variant) rec.counts[name] = static_cast<std::int64_t>(n);
    for (const auto& [name, n] : ds.counts.before_dedup) {
      rec.counts["before_dedup_" + name] = static_cast<std::int64_t>(n);
    }
    rec.counts["total"] = static_cast<std::int64_t>(ds.counts.total);
    rec.counts["duplicates_removed"] = static_cast<std::int64_t>(ds.counts.duplicates_removed);
    record(rec, "dataset.jsonl");
    record(rec, "dataset.manifest.json");
    return StageResult::Complete;
  }

  StageResult hook(StageRecord& rec) {
    if (!config_.doc.contains("finetune_hook")) {
      rec.note = "no hook";
      return StageResult::Skip;
    }
    const auto command = config_.doc["finetune_hook"]["command"].get<std::string>();
    const auto full = fmt::format("{} {} {}", command, shell_quote(fs::absolute(dir_ / "dataset.jsonl").string()),
                                  shell_quote(fs::absolute(dir_ / "config.json").string()));
    std::FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) throw Error(ErrorKind::HookFailed, "cannot start hook: " + command);
    std::string out;
    char buf[4096];
    while (const std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = ::pclose(pipe);
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = status != -1 && WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      throw Error(ErrorKind::HookFailed, fmt::format("hook exited with status {}: {}", code, text::trim(out)));
    }
    auto reply = json::parse(out, nullptr, false);
    if (reply.is_discarded()) {
      // Tolerate log lines before the JSON payload.
      const auto lines = text::split_lines(out);
      for (auto it = lines.rbegin(); it != lines.rend() && reply.is_discarded(); ++it) {
        if (!text::trim(*it).empty()) reply = json::parse(*it, nullptr, false);
      }
    }
    if (reply.is_discarded() || !reply.is_object()) throw Error(ErrorKind::HookFailed, "hook printed no JSON object");
    if (reply.contains("error")) throw Error(ErrorKind::HookFailed, "hook reported " + reply["error"].dump());
    if (!reply.contains("model_endpoint")) throw Error(ErrorKind::HookFailed, "hook reply lacks model_endpoint");
    ledger_.model_endpoint = reply["model_endpoint"];
    write_text(dir_ / "hook.json", reply.dump(2) + "\n");
    record(rec, "hook.json");
    return StageResult::Complete;
  }

  StageResult eval_game(StageRecord& rec) {
    const auto reports = read_reports();
    const auto stats = game_success_rate(reports);
    write_text(dir_ / "evals" / "game.json", to_json(stats) + "\n");
    write_text(dir_ / "evals" / "game.txt", render_table(stats));
    rec.counts["games_total"] = static_cast<std::int64_t>(stats.games_total);
    rec.counts["games_succeeded"] = static_cast<std::int64_t>(stats.games_succeeded);
    record(rec, "evals/game.json");
    record(rec, "evals/game.txt");
    return StageResult::Complete;
  }

  EvalOptions eval_options(const Corpus& world, std::optional<AgentEndpoint>& judge,
                           std::optional<YesNoLexicon>& lexicon) {
    const auto& e = section(config_.doc, "eval");
    EvalOptions o;
    o.concurrency = config_.concurrency();
    o.seed = config_.seed();
    if (e.value("yes_no_judge", std::string("rules")) == "agent") {
      judge = endpoint("judge", world);
      o.judge_mode = JudgeMode::Agent;
      o.judge = &*judge;
    }
    if (e.contains("lexicon")) {
      lexicon = YesNoLexicon::load(config_.resolve(e["lexicon"].get<std::string>()));
      o.lexicon = &*lexicon;
    }
    return o;
  }

  Corpus eval_corpus(const char* key) {
    const auto& e = section(config_.doc, "eval");
    if (e.contains(key)) return load_manifest(config_.resolve(e[key].get<std::string>()));
    return corpus();
  }

  StageResult eval_vqa(StageRecord& rec) {
    const auto& e = section(config_.doc, "eval");
    if (!e.contains("vqa_items")) {
      rec.note = "no vqa_items configured";
      return StageResult::Skip;
    }
    const auto items = read_vqa_items(config_.resolve(e["vqa_items"].get<std::string>()));
    const auto world = eval_corpus("vqa_corpus");
    const auto agent = endpoint("eval", world);
    std::optional<AgentEndpoint> judge;
    std::optional<YesNoLexicon> lexicon;
    const auto report = score_vqa(items, world, agent, eval_options(world, judge, lexicon));
    write_text(dir_ / "evals" / "vqa.json", to_json(report) + "\n");
    write_text(dir_ / "evals" / "vqa.txt", render_table(report));
    for (const auto& [type, s] : report.per_type) {
      rec.counts[type + "_total"] = static_cast<std::int64_t>(s.total);
      rec.counts[type + "_correct"] = static_cast<std::int64_t>(s.correct);
      rec.counts[type + "_unscored"] = static_cast<std::int64_t>(s.unscored);
    }
    record(rec, "evals/vqa.json");
    record(rec, "evals/vqa.txt");
    return StageResult::Complete;
  }

  StageResult eval_success(StageRecord& rec) {
    const auto& e = section(config_.doc, "eval");
    if (!e.contains("episodes")) {
      rec.note = "no episodes configured";
      return StageResult::Skip;
    }
    const auto episodes = read_episodes(config_.resolve(e["episodes"].get<std::string>()));
    const auto world = eval_corpus("episode_corpus");
    const auto agent = endpoint("eval", world);
    std::optional<AgentEndpoint> judge;
    std::optional<YesNoLexicon> lexicon;
    const auto report = success_detection_eval(episodes, world, agent, eval_options(world, judge, lexicon));
    write_text(dir_ / "evals" / "success.json", to_json(report) + "\n");
    write_text(dir_ / "evals" / "success.txt", render_table(report));
    rec.counts["total"] = static_cast<std::int64_t>(report.stats.total);
    rec.counts["correct"] = static_cast<std::int64_t>(report.stats.correct);
    rec.counts["unscored"] = static_cast<std::int64_t>(report.stats.unscored);
    record(rec, "evals/success.json");
    record(rec, "evals/success.txt");
    return StageResult::Complete;
  }

  const RunConfig& config_;
  fs::path dir_;
  const StageControl& control_;
  RunLedger& ledger_;
  Clock clock_;
  std::optional<Corpus> corpus_;
};

Clock config_clock(const RunConfig& config) {
  if (config.doc.contains("fixed_clock")) return fixed_clock(config.doc["fixed_clock"].get<std::string>());
  return utc_now;
}

void remove_artifacts(StageRecord& rec, const fs::path& dir) {
  for (const auto& [rel, hash] : rec.artifacts) fs::remove(dir / rel);
  rec = StageRecord{};
}

}  // namespace

RunLedger run_stage(const RunConfig& config, const fs::path& run_dir, Stage stage, const StageControl& control) {
  config.validate();
  fs::create_directories(run_dir);
  const Clock clock = config_clock(config);
  const auto hash = config.snapshot_hash();

  RunLedger ledger;
  if (auto existing = RunLedger::load(run_dir)) {
    ledger = std::move(*existing);
    if (ledger.config_hash != hash) {
      if (!control.force) {
        throw Error(ErrorKind::ConfigDrift,
                    fmt::format("{} was created with config {}, now {}", run_dir.string(), ledger.config_hash, hash));
      }
      ledger.overrides.push_back(fmt::format("{}: accepted config change {} -> {}", stage_name(stage),
                                             ledger.config_hash, hash));
      ledger.config_hash = hash;
      ledger.config = json::parse(config.snapshot());
      write_text(run_dir / "config.json", ledger.config.dump(2) + "\n");
    }
  } else {
    ledger.run_id = config.run_id();
    ledger.round = config.round();
    ledger.config_hash = hash;
    ledger.config = json::parse(config.snapshot());
    write_text(run_dir / "config.json", ledger.config.dump(2) + "\n");
  }

  auto& rec = ledger.at(stage);
  const bool finished = rec.status == StageStatus::Done || rec.status == StageStatus::Skipped;
  if (finished && !control.force) {
    for (const auto& [rel, h] : rec.artifacts) {
      if (!fs::exists(run_dir / rel) || sha256_file(run_dir / rel) != h) {
        throw Error(ErrorKind::ArtifactMismatch, fmt::format("{} no longer matches the ledger", rel));
      }
    }
    return ledger;
  }
  if (control.force && rec.status != StageStatus::Pending) {
    for (Stage s : downstream_of(stage)) {
      if (ledger.at(s).status == StageStatus::Pending) continue;
      remove_artifacts(ledger.at(s), run_dir);
      ledger.overrides.push_back(fmt::format("{}: reset by override of {}", stage_name(s), stage_name(stage)));
    }
    if (stage == Stage::Generate) fs::remove(run_dir / "dialogs.jsonl");
  }

  for (Stage dep : stage_dependencies(stage)) {
    if (ledger.at(dep).status != StageStatus::Done) {
      throw Error(ErrorKind::DependencyUnmet, fmt::format("{} needs {} (currently {})", stage_name(stage),
                                                          stage_name(dep), to_string(ledger.at(dep).status)));
    }
  }

  ledger.transition(stage, StageStatus::Running);
  if (rec.started_at.empty()) rec.started_at = clock();
  rec.error.clear();
  ledger.save(run_dir);

  StageRunner runner(config, run_dir, control, ledger, clock);
  try {
    const auto result = runner.run(stage, rec);
    if (result != StageResult::Incomplete) {
      ledger.transition(stage, result == StageResult::Complete ? StageStatus::Done : StageStatus::Skipped);
      rec.finished_at = clock();
    }
    ledger.save(run_dir);
  } catch (const std::exception& e) {
    rec.error = e.what();
    ledger.transition(stage, StageStatus::Failed);
    ledger.save(run_dir);
    throw;
  }
  return ledger;
}

// ---------------------------------------------------------------------------
// Rounds

namespace {

std::optional<json> read_json(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

std::optional<double> number_at(const std::optional<json>& j, std::initializer_list<const char*> path) {
  if (!j) return std::nullopt;
  const json* cur = &*j;
  for (const char* key : path) {
    if (!cur->is_object() || !cur->contains(key)) return std::nullopt;
    cur = &(*cur)[key];
  }
  if (!cur->is_number()) return std::nullopt;
  return cur->get<double>();
}

/// Agents for the next round from the hook's model_endpoint: a base URI, one
/// agent used for every role, or a role -> agent map.
json next_agents(const json& current, const json& endpoint) {
  json agents = current;
  auto apply_all = [&](const json& agent) {
    for (const char* role : {"describer", "guesser", "eval"}) agents[role] = agent;
  };
  if (endpoint.is_string()) {
    apply_all(json{{"kind", "remote"}, {"base_uri", endpoint.get<std::string>()}});
  } else if (endpoint.is_object() && endpoint.contains("kind")) {
    apply_all(endpoint);
  } else if (endpoint.is_object()) {
    for (const auto& [role, agent] : endpoint.items()) agents[role] = agent;
  } else {
    throw Error(ErrorKind::HookFailed, "model_endpoint must be a string or an object");
  }
  return agents;
}

}  // namespace

RoundsReport collect_rounds(const fs::path& run_dir) {
  std::vector<std::pair<int, fs::path>> dirs;
  if (fs::exists(run_dir)) {
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      const auto name = entry.path().filename().string();
      if (!entry.is_directory() || name.rfind("round-", 0) != 0) continue;
      try {
        dirs.emplace_back(std::stoi(name.substr(6)), entry.path());
      } catch (const std::exception&) {
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());
  RoundsReport report;
  for (const auto& [k, dir] : dirs) {
    const auto ledger = RunLedger::load(dir);
    if (!ledger) continue;
    RoundRow row;
    row.round = k;
    const auto& agents = section(ledger->config, "agents");
    row.model = agents.contains("guesser") ? agent_label(agents["guesser"]) : "?";
    row.counts = ledger->totals();
    row.game_success = number_at(read_json(dir / "evals" / "game.json"), {"percent"});
    const auto vqa = read_json(dir / "evals" / "vqa.json");
    row.vqa_yes_no = number_at(vqa, {"per_type", "yes_no", "accuracy"});
    row.vqa_counting = number_at(vqa, {"per_type", "counting", "accuracy"});
    row.success_detection = number_at(read_json(dir / "evals" / "success.json"), {"stats", "accuracy"});
    switch (ledger->at(Stage::FinetuneHook).status) {
      case StageStatus::Done: row.hook = "ok"; break;
      case StageStatus::Failed: row.hook = "failed"; break;
      case StageStatus::Skipped: row.hook = "no hook"; break;
      default: row.hook = "-"; break;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string RoundsReport::to_json() const {
  auto opt = [](std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json rounds = ordered_json::array();
  for (const auto& r : rows) {
    rounds.push_back(ordered_json{{"round", r.round},
                                  {"model", r.model},
                                  {"counts", r.counts},
                                  {"game_success", opt(r.game_success)},
                                  {"vqa_yes_no", opt(r.vqa_yes_no)},
                                  {"vqa_counting", opt(r.vqa_counting)},
                                  {"success_detection", opt(r.success_detection)},
                                  {"hook", r.hook}});
  }
  return ordered_json{{"rounds", std::move(rounds)}}.dump(2);
}

std::string RoundsReport::render() const {
  auto cell = [&](std::optional<double> v, std::optional<double> base, bool first) {
    std::string s = format_percent(v);
    if (!first && v && base) s += fmt::format(" ({:+.2f})", *v - *base);
    return s;
  };
  auto count = [](const RoundRow& r, const char* key) {
    const auto it = r.counts.find(key);
    return it == r.counts.end() ? std::string("-") : std::to_string(it->second);
  };
  std::vector<std::vector<std::string>> table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& b = rows.front();
    const bool first = i == 0;
    table.push_back({fmt::format("round {}", r.round), r.model, count(r, "games"), count(r, "retained"),
                     count(r, "examples"), cell(r.game_success, b.game_success, first),
                     cell(r.vqa_yes_no, b.vqa_yes_no, first), cell(r.vqa_counting, b.vqa_counting, first),
                     cell(r.success_detection, b.success_detection, first), r.hook});
  }
  return render_table({"Round", "Model", "Games", "Retained", "Examples", "Game success", "VQA yes/no",
                       "VQA counting", "Success detection", "Hook"},
                      table);
}

RoundsReport run_round(const RunConfig& config, const fs::path& run_dir, int rounds, const StageControl& control) {
  config.validate();
  if (rounds < 1) throw Error(ErrorKind::InvalidConfig, "rounds must be >= 1");
  fs::create_directories(run_dir);
  const int first = config.round();
  json agents = section(config.doc, "agents");
  std::optional<Error> hook_error;

  for (int k = first; k < first + rounds && !hook_error; ++k) {
    RunConfig rc = config;
    rc.doc["round"] = k;
    rc.doc["agents"] = agents;
    // Later rounds resample their games.
    if (k != first) rc.doc["seed"] = derive_seed(config.seed(), fmt::format("round-{}", k));
    const auto dir = run_dir / fmt::format("round-{}", k);

    for (Stage s : {Stage::Generate, Stage::Filter, Stage::Dataset, Stage::FinetuneHook}) {
      try {
        run_stage(rc, dir, s, control);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::HookFailed) throw;
        hook_error = e;
      }
    }
    if (hook_error) {
      auto ledger = *RunLedger::load(dir);
      for (Stage s : {Stage::EvalGame, Stage::EvalVqa, Stage::EvalSuccess}) {
        auto& rec = ledger.at(s);
        if (rec.status != StageStatus::Pending) continue;
        ledger.transition(s, StageStatus::Skipped);
        rec.note = "skipped: finetune hook failed";
      }
      ledger.save(dir);
      break;
    }
    for (Stage s : {Stage::EvalGame, Stage::EvalVqa, Stage::EvalSuccess}) run_stage(rc, dir, s, control);
    if (const auto ledger = RunLedger::load(dir); ledger && ledger->model_endpoint) {
      agents = next_agents(agents, *ledger->model_endpoint);
    }
  }

  auto report = collect_rounds(run_dir);
  write_text(run_dir / "rounds.json", report.to_json() + "\n");
  write_text(run_dir / "rounds.txt", report.render());
  if (hook_error) throw *hook_error;
  return report;
}

}  // namespace dialog_forge
