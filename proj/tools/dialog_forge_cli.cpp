#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dialog_forge/bench.hpp"
#include "dialog_forge/dataset.hpp"
#include "dialog_forge/error.hpp"
#include "dialog_forge/eval.hpp"
#include "dialog_forge/orchestrator.hpp"
#include "dialog_forge/wire_server.hpp"

namespace fs = std::filesystem;
namespace df = dialog_forge;

namespace {

constexpr int kExitError = 1;
constexpr int kExitIncomplete = 3;

struct CommonArgs {
  std::string config;
  std::string run_dir;
  bool stage_override = false;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App& cmd, CommonArgs& args) {
  cmd.add_option("--config", args.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd.add_option("--run-dir", args.run_dir, "Run directory (default: <output_dir>/round-<k>)");
  cmd.add_flag("--stage-override", args.stage_override,
               "Rerun a finished stage or accept a changed config; resets downstream stages");
  cmd.add_option("--seed", args.seed, "Override the master seed");
}

df::RunConfig load(const CommonArgs& args) {
  auto config = df::load_run_config(args.config);
  if (args.seed) config.doc["seed"] = *args.seed;
  return config;
}

fs::path output_root(const df::RunConfig& config) {
  if (config.doc.contains("output_dir")) return config.resolve(config.doc["output_dir"].get<std::string>());
  return config.resolve("runs/" + config.run_id());
}

fs::path stage_dir(const CommonArgs& args, const df::RunConfig& config) {
  if (!args.run_dir.empty()) return args.run_dir;
  return output_root(config) / fmt::format("round-{}", config.round());
}

void print_stage(const df::RunLedger& ledger, df::Stage stage) {
  const auto& rec = ledger.at(stage);
  std::cout << fmt::format("{}: {}", df::stage_name(stage), df::to_string(rec.status));
  if (!rec.note.empty()) std::cout << " (" << rec.note << ")";
  std::cout << '\n';
  for (const auto& [key, n] : rec.counts) std::cout << fmt::format("  {} = {}\n", key, n);
}

int stage_command(const CommonArgs& args, df::Stage stage, std::optional<std::size_t> max_new_items) {
  const auto config = load(args);
  const auto dir = stage_dir(args, config);
  df::StageControl control;
  control.force = args.stage_override;
  control.max_new_items = max_new_items;
  const auto ledger = df::run_stage(config, dir, stage, control);
  print_stage(ledger, stage);
  for (const auto* file : {"evals/game.txt", "evals/vqa.txt", "evals/success.txt"}) {
    const bool mine = (stage == df::Stage::EvalGame && std::string_view(file) == "evals/game.txt") ||
                      (stage == df::Stage::EvalVqa && std::string_view(file) == "evals/vqa.txt") ||
                      (stage == df::Stage::EvalSuccess && std::string_view(file) == "evals/success.txt");
    if (mine && fs::exists(dir / file)) {
      std::ifstream in(dir / file);
      std::cout << in.rdbuf();
    }
  }
  return ledger.at(stage).status == df::StageStatus::Running ? kExitIncomplete : 0;
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-play dialog data engine for vision-language models"};
  app.require_subcommand(1);

  CommonArgs common;
  std::optional<std::size_t> max_new_items;
  struct StageCmd {
    const char* name;
    df::Stage stage;
    const char* help;
  };
  const StageCmd stage_cmds[] = {
      {"generate", df::Stage::Generate, "Play the configured games into dialogs.jsonl (resumable)"},
      {"filter", df::Stage::Filter, "Replay final guesses under every target position"},
      {"dataset", df::Stage::Dataset, "Build the fine-tuning dataset from retained dialogs"},
      {"eval-game", df::Stage::EvalGame, "Game success rate over the filtered dialogs"},
      {"eval-vqa", df::Stage::EvalVqa, "Score the configured VQA items"},
      {"eval-success", df::Stage::EvalSuccess, "Score success detection on the configured episodes"},
  };
  std::map<CLI::App*, df::Stage> stage_of;
  for (const auto& sc : stage_cmds) {
    auto* cmd = app.add_subcommand(sc.name, sc.help);
    add_common(*cmd, common);
    if (sc.stage == df::Stage::Generate) {
      cmd->add_option("--max-new-items", max_new_items, "Stop after this many new dialogs");
    }
    stage_of[cmd] = sc.stage;
  }

  auto* round_cmd = app.add_subcommand("run-round", "Run every stage, the fine-tune hook and evals, per round");
  add_common(*round_cmd, common);
  int rounds = 1;
  round_cmd->add_option("--rounds", rounds, "Consecutive rounds to run")->check(CLI::PositiveNumber);

  auto* bench_cmd = app.add_subcommand("synth-bench", "Synthetic-world acceptance suite and trend tables");
  df::bench::BenchOptions bench;
  std::string only;
  bench_cmd->add_option("--seed", bench.seed, "Master seed");
  bench_cmd->add_option("--scale", bench.scale, "Multiply every game count")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--concurrency", bench.concurrency, "Worker threads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--only", only, "Run one section")
      ->check(CLI::IsMember({"chance", "soundness", "difficulty", "grouping", "completeness", "exact"}));

  auto* embed_cmd = app.add_subcommand("embed", "Fill missing corpus embeddings through an embedding agent");
  add_common(*embed_cmd, common);
  std::string embed_out;
  embed_cmd->add_option("--out", embed_out, "Output manifest")->required();

  auto* serve_cmd = app.add_subcommand("serve-oracle", "Serve the synthetic oracle over the agent wire protocol");
  std::string world_path, strategy = "info_gain_greedy", host = "127.0.0.1";
  double noise = 0.0;
  int port = 8080, max_concurrent = 16;
  std::uint64_t serve_seed = 0;
  serve_cmd->add_option("--world", world_path, "World spec (JSON)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--noise", noise, "Describer noise")->check(CLI::Range(0.0, 1.0));
  serve_cmd->add_option("--strategy", strategy, "Guesser strategy");
  serve_cmd->add_option("--seed", serve_seed, "Oracle seed");
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--max-concurrent", max_concurrent, "Concurrent request cap")->check(CLI::PositiveNumber);

  auto* export_cmd = app.add_subcommand("export-inline", "Rewrite a dataset with base64-inlined images");
  std::string export_in, export_out, export_base;
  export_cmd->add_option("--in", export_in, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", export_out, "Output JSONL")->required();
  export_cmd->add_option("--base-dir", export_base, "Directory relative image paths resolve against");

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, stage] : stage_of) {
      if (cmd->parsed()) return stage_command(common, stage, max_new_items);
    }
    if (round_cmd->parsed()) {
      const auto config = load(common);
      const fs::path dir = common.run_dir.empty() ? output_root(config) : fs::path(common.run_dir);
      df::StageControl control;
      control.force = common.stage_override;
      try {
        const auto report = df::run_round(config, dir, rounds, control);
        std::cout << report.render();
      } catch (const df::Error& e) {
        if (e.kind() == df::ErrorKind::HookFailed) std::cout << df::collect_rounds(dir).render();
        throw;
      }
      return 0;
    }
    if (bench_cmd->parsed()) {
      std::vector<df::bench::Section> sections;
      if (only.empty()) {
        sections = df::bench::run_all(bench);
      } else if (only == "chance") {
        sections.push_back(df::bench::chance_rate(bench));
      } else if (only == "soundness") {
        sections.push_back(df::bench::filter_soundness(bench));
      } else if (only == "difficulty") {
        sections.push_back(df::bench::difficulty_trend(bench));
      } else if (only == "grouping") {
        sections.push_back(df::bench::grouping_trend(bench));
      } else if (only == "completeness") {
        sections.push_back(df::bench::oracle_completeness(bench));
      } else {
        sections.push_back(df::bench::exact_vs_simulated(bench));
      }
      bool ok = true;
      for (const auto& s : sections) {
        std::cout << df::bench::render(s) << '\n';
        for (const auto& c : s.checks) ok = ok && c.passed;
      }
      return ok ? 0 : kExitError;
    }
    if (embed_cmd->parsed()) {
      const auto config = load(common);
      config.validate();
      const auto corpus = df::load_config_corpus(config);
      const auto& agents = config.doc.at("agents");
      const auto& agent = agents.contains("embedder") ? agents["embedder"] : agents["describer"];
      const auto endpoint = df::make_endpoint(agent, "embedder", config, corpus);
      const auto embedded = df::embed_corpus(corpus, endpoint, config.concurrency());
      df::write_manifest(embedded, embed_out);
      std::cout << fmt::format("embedded {} images into {}\n", embedded.size(), embed_out);
      return 0;
    }
    if (serve_cmd->parsed()) {
      const auto spec = df::synth::load_world_spec(world_path);
      const auto world = df::synth::gen_world(spec.seed, spec.n_images, spec.domains, spec.distinct);
      df::synth::OraclePolicy policy;
      policy.describer_noise = noise;
      const auto parsed = df::synth::parse_strategy(strategy);
      if (!parsed) throw df::Error(df::ErrorKind::InvalidConfig, "unknown strategy `" + strategy + "`");
      policy.guesser_strategy = *parsed;
      auto backend = std::make_shared<df::synth::SyntheticOracleBackend>(world, spec.domains, policy, serve_seed);
      df::WireServer server(backend, max_concurrent);
      const int bound = server.start(host, port);
      std::cout << fmt::format("serving {} on http://{}:{}\n", backend->describe(), host, bound) << std::flush;
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return 0;
    }
    if (export_cmd->parsed()) {
      const fs::path base = export_base.empty() ? fs::path(export_in).parent_path() : fs::path(export_base);
      const auto n = df::export_inline(export_in, export_out, base);
      std::cout << fmt::format("inlined {} examples into {}\n", n, export_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
