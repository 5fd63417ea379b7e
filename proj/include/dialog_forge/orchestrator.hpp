#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/synthetic_world.hpp"

namespace dialog_forge {

enum class Stage { Generate, Filter, Dataset, FinetuneHook, EvalGame, EvalVqa, EvalSuccess };
inline constexpr Stage kStages[] = {Stage::Generate, Stage::Filter,  Stage::Dataset,    Stage::FinetuneHook,
                                    Stage::EvalGame, Stage::EvalVqa, Stage::EvalSuccess};

std::string_view stage_name(Stage stage) noexcept;
/// Accepts both "eval_game" and "eval-game".
std::optional<Stage> parse_stage(std::string_view name) noexcept;
/// Stages that must be done before `stage` may run.
std::vector<Stage> stage_dependencies(Stage stage);

/// Run configuration. Kept as the JSON document it was loaded from; the
/// accessors below read it with defaults. Relative paths resolve against
/// `base_dir`.
///
/// {
///   "run_id": "demo", "round": 1, "seed": 7, "max_turns": 3, "concurrency": 4,
///   "corpus": {"manifest": "corpus.jsonl"} | {"world": "world.json"} | {"world": {...}},
///   "grouping": {"strategy": "random|cluster|similarity|episode_frames", "n": 4, "games": 1000,
///                "games_per_task": 1000, "frame_pairing": "same_episode|same_task"},
///   "agents": {"describer": A, "guesser": A, "eval": A?, "judge": A?},
///   "game": {"parse_retries": 2, "allow_guess_on_empty_summary": false},
///   "dataset": {"mode": "full|answers_only", "emit_summaries": false},
///   "eval": {"vqa_items": path?, "vqa_corpus": path?, "episodes": path?, "episode_corpus": path?,
///            "yes_no_judge": "rules|agent", "lexicon": path?},
///   "finetune_hook": {"command": "..."}?,
///   "fixed_clock": "2024-01-01T00:00:00Z"?
/// }
///
/// An agent A is {"kind": "synthetic", "noise": 0.1, "strategy": "info_gain_greedy"},
/// {"kind": "remote", "base_uri": ..., "auth_env": ..., "timeout_ms": ..., "max_retries": ...,
/// "rate_limit_per_sec": ...} or {"kind": "scripted", "script": path}, each with an optional "name".
struct RunConfig {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base_dir = ".";

  std::string run_id() const;
  int round() const;
  std::uint64_t seed() const;
  int concurrency() const;
  std::filesystem::path resolve(const std::string& path) const;

  /// Throws InvalidConfig on violated invariants or missing referenced files.
  void validate() const;
  /// Canonical JSON (sorted keys) of everything that determines artifacts.
  std::string snapshot() const;
  std::string snapshot_hash() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(std::string_view json, std::filesystem::path base_dir = ".");

enum class StageStatus { Pending, Running, Done, Failed, Skipped };
std::string_view to_string(StageStatus s) noexcept;

struct StageRecord {
  StageStatus status = StageStatus::Pending;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> artifacts;  // run-dir relative path -> sha256
  std::map<std::string, std::int64_t> counts;
  std::string note;
  std::string error;
};

struct RunLedger {
  std::string run_id;
  int round = 1;
  std::string config_hash;
  nlohmann::json config;
  std::map<Stage, StageRecord> stages;
  std::optional<nlohmann::json> model_endpoint;  // returned by the finetune hook
  std::vector<std::string> overrides;

  RunLedger();
  StageRecord& at(Stage s) { return stages.at(s); }
  const StageRecord& at(Stage s) const { return stages.at(s); }
  /// Enforces pending -> running -> done|failed|skipped, failed -> running.
  void transition(Stage s, StageStatus to);
  /// Aggregate counts across stages: games, dialogs, succeeded, retained, examples.
  std::map<std::string, std::int64_t> totals() const;

  std::string to_json() const;
  static RunLedger from_json(std::string_view json);
  static std::optional<RunLedger> load(const std::filesystem::path& run_dir);
  /// Writes ledger.json atomically (temp file + rename).
  void save(const std::filesystem::path& run_dir) const;
};

/// Wraps every backend built for a run; `role` is describer, guesser, eval or judge.
using BackendWrapper =
    std::function<std::shared_ptr<AgentBackend>(const std::string& role, std::shared_ptr<AgentBackend>)>;

struct StageControl {
  /// Rerun the stage even when done (or when the config drifted); downstream
  /// stages are reset to pending.
  bool force = false;
  /// Stop generate after this many new dialogs, leaving it resumable.
  std::optional<std::size_t> max_new_items;
  BackendWrapper wrap;
};

/// Runs one stage in `run_dir`. A done stage with an unchanged config is a
/// no-op after its artifact hashes are re-verified. Throws DependencyUnmet,
/// ConfigDrift, ArtifactMismatch, HookFailed and whatever the stage raises;
/// the ledger records the failure first.
RunLedger run_stage(const RunConfig& config, const std::filesystem::path& run_dir, Stage stage,
                    const StageControl& control = {});

/// Re-hashes every artifact the ledger lists. Returns the mismatching paths.
std::vector<std::string> verify_artifacts(const RunLedger& ledger, const std::filesystem::path& run_dir);

struct RoundRow {
  int round = 0;
  std::string model;
  std::map<std::string, std::int64_t> counts;
  std::optional<double> game_success;
  std::optional<double> vqa_yes_no;
  std::optional<double> vqa_counting;
  std::optional<double> success_detection;
  std::string hook;  // "no hook", "ok" or "failed"
};

struct RoundsReport {
  std::vector<RoundRow> rows;
  std::string to_json() const;
  /// Table with per-metric deltas against the first round.
  std::string render() const;
};

/// Reads every round-k/ledger.json under run_dir.
RoundsReport collect_rounds(const std::filesystem::path& run_dir);

/// Runs `rounds` consecutive rounds starting at config.round(), each in
/// run_dir/round-k, then writes rounds.json and rounds.txt. Round k > first
/// resamples its games with a seed derived from the master seed and plays
/// with the endpoint returned by the previous round's hook. Throws HookFailed
/// after writing the report; remaining evals and rounds are skipped.
RoundsReport run_round(const RunConfig& config, const std::filesystem::path& run_dir, int rounds = 1,
                       const StageControl& control = {});

/// Builds the corpus a config refers to (manifest or synthetic world).
Corpus load_config_corpus(const RunConfig& config);
/// The synthetic domain in effect (world spec domains or defaults).
synth::DomainSpec config_domain(const RunConfig& config);

/// Endpoint for one agent description; `world` backs synthetic agents.
AgentEndpoint make_endpoint(const nlohmann::json& agent, const std::string& role, const RunConfig& config,
                            const Corpus& world, const BackendWrapper& wrap = {});

/// Fills missing embeddings by asking an Embedding-role endpoint, whose reply
/// must be a JSON array of numbers.
Corpus embed_corpus(const Corpus& corpus, const AgentEndpoint& endpoint, int concurrency = 1);

}  // namespace dialog_forge
