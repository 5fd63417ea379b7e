#include "dialog_forge/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/error.hpp"
#include "dialog_forge/hashing.hpp"
#include "dialog_forge/parallel.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kVariantNames[] = {"describer", "guesser", "description", "summary"};

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::vector<ImageRef> placeholder_refs(std::size_t n) { return std::vector<ImageRef>(n, UriImage{}); }

/// The prompt a model sees for this example, with `<image_k>` markers.
std::optional<PromptPayload> prompt_for(const ExampleBody& body) {
  return std::visit(
      Overloaded{
          [](const DescriberExample& e) -> std::optional<PromptPayload> {
            return render_prompt(Role::Describer, {{"question", e.question}}, placeholder_refs(1));
          },
          [](const GuesserExample& e) -> std::optional<PromptPayload> {
            Bindings b{{"image_description", e.summary}};
            if (e.task) b.emplace("task", *e.task);
            return e.forced ? render_forced_guess(b, placeholder_refs(e.image_ids.size()))
                            : render_prompt(Role::GuesserTurn, b, placeholder_refs(e.image_ids.size()));
          },
          [](const DescriptionExample&) -> std::optional<PromptPayload> { return std::nullopt; },
          [](const SummaryExample& e) -> std::optional<PromptPayload> {
            return render_prompt(Role::GuesserSummary,
                                 {{"description", e.description}, {"question", e.question}, {"answer", e.answer}},
                                 {});
          },
      },
      body);
}

std::vector<std::string> image_ids_of(const ExampleBody& body) {
  return std::visit(Overloaded{
                        [](const DescriberExample& e) { return std::vector<std::string>{e.image_id}; },
                        [](const GuesserExample& e) { return e.image_ids; },
                        [](const DescriptionExample& e) { return std::vector<std::string>{e.image_id}; },
                        [](const SummaryExample&) { return std::vector<std::string>{}; },
                    },
                    body);
}

/// Splits rendered text at `<image_k>` markers into text and image inputs.
ordered_json interleave(const std::string& text, const std::vector<std::string>& refs) {
  ordered_json inputs = ordered_json::array();
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("<image_", pos);
    std::size_t close = open == std::string::npos ? std::string::npos : text.find('>', open);
    // Markers are generated by render_prompt and always well formed.
    if (open == std::string::npos || close == std::string::npos) {
      inputs.push_back(ordered_json{{"text", text.substr(pos)}});
      break;
    }
    if (open > pos) inputs.push_back(ordered_json{{"text", text.substr(pos, open - pos)}});
    const auto slot = std::stoul(text.substr(open + 7, close - open - 7));
    inputs.push_back(ordered_json{{"image_ref", refs.at(slot - 1)}});
    pos = close + 1;
  }
  return inputs;
}

std::string dedup_key(const TrainingExample& ex) {
  std::string key(ex.variant());
  auto add = [&](std::string_view s) {
    key += '\x1f';
    key += text::trim(s);
  };
  std::visit(Overloaded{
                 [&](const DescriberExample& e) {
                   add(e.image_id);
                   add(e.question);
                   add(e.answer);
                 },
                 [&](const GuesserExample& e) {
                   for (const auto& id : e.image_ids) add(id);
                   add(e.summary);
                   add(e.target_text);
                   add(e.task.value_or(""));
                   add(e.forced ? "1" : "0");
                 },
                 [&](const DescriptionExample& e) {
                   add(e.image_id);
                   add(e.description);
                 },
                 [&](const SummaryExample& e) {
                   add(e.description);
                   add(e.question);
                   add(e.answer);
                   add(e.summary);
                 },
             },
             ex.body);
  return key;
}

std::string media_type_for(const std::filesystem::path& path) {
  auto ext = text::to_lower(path.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

}  // namespace

std::string_view TrainingExample::variant() const noexcept { return kVariantNames[body.index()]; }

const std::string& TrainingExample::target_text() const {
  return std::visit(Overloaded{
                        [](const DescriberExample& e) -> const std::string& { return e.answer; },
                        [](const GuesserExample& e) -> const std::string& { return e.target_text; },
                        [](const DescriptionExample& e) -> const std::string& { return e.description; },
                        [](const SummaryExample& e) -> const std::string& { return e.summary; },
                    },
                    body);
}

std::vector<TrainingExample> extract_examples(const DialogRecord& dialog, const ValidationReport& report,
                                              const ExtractOptions& options) {
  if (!report.passed || report.game_id != dialog.spec.game_id || !dialog.succeeded() || !dialog.final_action) {
    throw Error(ErrorKind::NotRetained, dialog.spec.game_id + " did not pass validation");
  }
  const GameSpec& spec = dialog.spec;
  std::vector<TrainingExample> out;
  out.reserve(dialog.turns.size() * (options.emit_summaries ? 3 : 2) + 1);
  auto push = [&](ExampleBody body) { out.push_back(TrainingExample{std::move(body), spec.game_id, options.round_tag}); };

  std::string summary;
  for (const Turn& turn : dialog.turns) {
    push(GuesserExample{spec.image_ids, summary, format_action(Question{turn.question}), spec.task_label, false});
    push(DescriberExample{spec.target_id(), turn.question, turn.answer});
    if (options.emit_summaries) push(SummaryExample{summary, turn.question, turn.answer, turn.summary_after});
    summary = turn.summary_after;
  }
  const bool forced = static_cast<int>(dialog.turns.size()) >= spec.max_turns;
  push(GuesserExample{spec.image_ids, summary, format_action(*dialog.final_action), spec.task_label, forced});
  return out;
}

std::string_view to_string(DatasetMode mode) noexcept {
  return mode == DatasetMode::Full ? "full" : "answers_only";
}

std::optional<DatasetMode> parse_dataset_mode(std::string_view name) noexcept {
  if (name == "full") return DatasetMode::Full;
  if (name == "answers_only") return DatasetMode::AnswersOnly;
  return std::nullopt;
}

void finalize_dataset(Dataset& dataset) {
  DatasetCounts counts;
  counts.skipped = dataset.counts.skipped;
  for (auto name : kVariantNames) {
    counts.per_variant[std::string(name)] = 0;
    counts.before_dedup[std::string(name)] = 0;
  }
  std::set<std::string> seen;
  std::vector<TrainingExample> kept;
  kept.reserve(dataset.examples.size());
  for (auto& ex : dataset.examples) {
    ++counts.before_dedup[std::string(ex.variant())];
    if (!seen.insert(dedup_key(ex)).second) {
      ++counts.duplicates_removed;
      continue;
    }
    ++counts.per_variant[std::string(ex.variant())];
    kept.push_back(std::move(ex));
  }
  counts.total = kept.size();
  dataset.examples = std::move(kept);
  dataset.counts = std::move(counts);
}

Dataset build_sft_dataset(std::span<const DialogRecord> retained, std::span<const ValidationReport> reports,
                          DatasetMode mode, const ExtractOptions& options) {
  std::map<std::string, const ValidationReport*, std::less<>> by_game;
  for (const auto& r : reports) {
    if (r.passed) by_game[r.game_id] = &r;
  }
  std::vector<std::size_t> order(retained.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return retained[a].spec.game_id < retained[b].spec.game_id;
  });

  Dataset dataset;
  dataset.mode = std::string(to_string(mode));
  dataset.round_tag = options.round_tag;
  for (std::size_t i : order) {
    const auto& dialog = retained[i];
    const auto it = by_game.find(dialog.spec.game_id);
    if (it == by_game.end()) {
      throw Error(ErrorKind::NotRetained, dialog.spec.game_id + " has no passing validation report");
    }
    for (auto& ex : extract_examples(dialog, *it->second, options)) {
      if (mode == DatasetMode::AnswersOnly && !std::holds_alternative<DescriberExample>(ex.body)) continue;
      dataset.examples.push_back(std::move(ex));
    }
  }
  finalize_dataset(dataset);
  return dataset;
}

Dataset build_self_qa_dataset(const Corpus& corpus, const AgentEndpoint& question_agent,
                              const AgentEndpoint& answer_agent, int per_image, const SelfQaOptions& options) {
  Dataset dataset;
  dataset.mode = "self_qa";
  dataset.round_tag = options.round_tag;
  const std::size_t per = static_cast<std::size_t>(std::max(per_image, 0));
  const std::size_t total = corpus.size() * per;

  struct Slot {
    std::optional<DescriberExample> example;
    std::string problem;
  };
  std::vector<Slot> slots(total);
  parallel_for(total, options.concurrency, [&](std::size_t i) {
    const auto& record = corpus.records()[i / per];
    const std::string item_id = fmt::format("selfqa:{}:{}", record.image_id, i % per);
    const std::uint64_t seed = derive_seed(options.seed, item_id);
    const std::vector<ImageRef> image{corpus.image_ref(record.image_id)};
    try {
      const auto raw_q = question_agent.invoke(render_prompt(Role::SelfQAQuestion, {}, image, options.sampling),
                                               InvocationContext{item_id, seed, 0});
      const auto question = parse_self_qa_question(raw_q);
      if (!question) {
        slots[i].problem = fmt::format("{}: question reply has no question marker", item_id);
        return;
      }
      const auto raw_a = answer_agent.invoke(
          render_prompt(Role::SelfQAAnswer, {{"question", *question}}, image, options.sampling),
          InvocationContext{item_id, seed, 1});
      slots[i].example = DescriberExample{record.image_id, *question, parse_describer_output(raw_a)};
    } catch (const Error& e) {
      slots[i].problem = fmt::format("{}: {}", item_id, e.what());
    }
  });

  for (auto& slot : slots) {
    if (slot.example) {
      dataset.examples.push_back(TrainingExample{std::move(*slot.example), {}, options.round_tag});
    } else {
      ++dataset.counts.skipped;
      dataset.log.push_back(std::move(slot.problem));
    }
  }
  finalize_dataset(dataset);
  return dataset;
}

Dataset build_description_sft(const Corpus& corpus, int round_tag) {
  Dataset dataset;
  dataset.mode = "description";
  dataset.round_tag = round_tag;
  for (const auto& record : corpus.records()) {
    if (!record.task_label || text::trim(*record.task_label).empty()) {
      throw Error(ErrorKind::MissingLabel, record.image_id + " has no task_label");
    }
    dataset.examples.push_back(TrainingExample{DescriptionExample{record.image_id, *record.task_label}, {}, round_tag});
  }
  finalize_dataset(dataset);
  return dataset;
}

// ---------------------------------------------------------------------------
// Serialization

ImageResolver corpus_resolver(const Corpus& corpus) {
  return [&corpus](const std::string& id) { return corpus.at(id).content_ref; };
}

std::string to_jsonl(const TrainingExample& ex, const ImageResolver& resolve) {
  std::vector<std::string> refs;
  for (const auto& id : image_ids_of(ex.body)) refs.push_back(resolve ? resolve(id) : id);

  ordered_json j;
  if (const auto payload = prompt_for(ex.body)) {
    j["inputs"] = interleave(payload->text, refs);
  } else {
    ordered_json inputs = ordered_json::array();
    for (const auto& r : refs) inputs.push_back(ordered_json{{"image_ref", r}});
    j["inputs"] = std::move(inputs);
  }
  j["target_text"] = ex.target_text();

  ordered_json meta;
  meta["variant"] = ex.variant();
  if (!ex.source_game_id.empty()) meta["game_id"] = ex.source_game_id;
  meta["round"] = ex.round_tag;
  std::visit(Overloaded{
                 [&](const DescriberExample& e) {
                   meta["image_id"] = e.image_id;
                   meta["question"] = e.question;
                 },
                 [&](const GuesserExample& e) {
                   meta["image_ids"] = e.image_ids;
                   meta["summary"] = e.summary;
                   if (e.task) meta["task"] = *e.task;
                   meta["forced"] = e.forced;
                 },
                 [&](const DescriptionExample& e) { meta["image_id"] = e.image_id; },
                 [&](const SummaryExample& e) {
                   meta["description"] = e.description;
                   meta["question"] = e.question;
                   meta["answer"] = e.answer;
                 },
             },
             ex.body);
  j["meta"] = std::move(meta);
  return j.dump();
}

TrainingExample example_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ParseError, "example line is not a JSON object");
  try {
    const auto& meta = j.at("meta");
    const auto target = j.at("target_text").get<std::string>();
    const auto variant = meta.at("variant").get<std::string>();
    TrainingExample ex;
    ex.source_game_id = meta.value("game_id", std::string());
    ex.round_tag = meta.value("round", 1);
    if (variant == "describer") {
      ex.body = DescriberExample{meta.at("image_id").get<std::string>(), meta.at("question").get<std::string>(), target};
    } else if (variant == "guesser") {
      GuesserExample g;
      g.image_ids = meta.at("image_ids").get<std::vector<std::string>>();
      g.summary = meta.at("summary").get<std::string>();
      g.target_text = target;
      if (meta.contains("task")) g.task = meta["task"].get<std::string>();
      g.forced = meta.value("forced", false);
      ex.body = std::move(g);
    } else if (variant == "description") {
      ex.body = DescriptionExample{meta.at("image_id").get<std::string>(), target};
    } else if (variant == "summary") {
      ex.body = SummaryExample{meta.at("description").get<std::string>(), meta.at("question").get<std::string>(),
                               meta.at("answer").get<std::string>(), target};
    } else {
      throw Error(ErrorKind::ParseError, "unknown example variant `" + variant + "`");
    }
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("example: ") + e.what());
  }
}

std::string write_dataset(const Dataset& dataset, const std::filesystem::path& path, const ImageResolver& resolve) {
  std::string bytes;
  for (const auto& ex : dataset.examples) {
    bytes += to_jsonl(ex, resolve);
    bytes += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << bytes;
  out.close();
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
  return sha256_hex(bytes);
}

std::vector<TrainingExample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::vector<TrainingExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    out.push_back(example_from_json(line));
  }
  return out;
}

std::string manifest_json(const Dataset& dataset, std::string_view source_run_id, std::string_view content_hash) {
  ordered_json counts;
  for (const auto& [name, n] : dataset.counts.per_variant) counts[name] = n;
  counts["total"] = dataset.counts.total;
  counts["before_dedup"] = dataset.counts.before_dedup;
  counts["duplicates_removed"] = dataset.counts.duplicates_removed;
  counts["skipped"] = dataset.counts.skipped;
  ordered_json j;
  j["counts"] = std::move(counts);
  j["source_run_id"] = source_run_id;
  j["mode"] = dataset.mode;
  j["round_tag"] = dataset.round_tag;
  j["content_hash"] = fmt::format("sha256:{}", content_hash);
  return j.dump(2);
}

std::size_t export_inline(const std::filesystem::path& in_path, const std::filesystem::path& out_path,
                          const std::filesystem::path& base_dir) {
  std::ifstream in(in_path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + in_path.string());
  std::ostringstream out;
  std::map<std::string, ordered_json> cache;
  std::size_t inlined = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("inputs")) throw Error(ErrorKind::ParseError, "not a dataset line");
    for (auto& input : j["inputs"]) {
      if (!input.contains("image_ref")) continue;
      const auto ref = input["image_ref"].get<std::string>();
      auto it = cache.find(ref);
      if (it == cache.end()) {
        std::string local = ref;
        if (local.rfind("file://", 0) == 0) local = local.substr(7);
        if (local.find("://") != std::string::npos) {
          throw Error(ErrorKind::DanglingContentRef, "cannot inline non-file reference " + ref);
        }
        std::filesystem::path p(local);
        if (p.is_relative()) p = base_dir / p;
        std::ifstream img(p, std::ios::binary);
        if (!img) throw Error(ErrorKind::DanglingContentRef, "cannot read image " + p.string());
        const std::string bytes((std::istreambuf_iterator<char>(img)), std::istreambuf_iterator<char>());
        it = cache.emplace(ref, ordered_json{{"b64", base64_encode(bytes)}, {"media_type", media_type_for(p)}}).first;
      }
      input = it->second;
      ++inlined;
    }
    out << j.dump() << '\n';
  }
  std::ofstream o(out_path, std::ios::binary | std::ios::trunc);
  if (!o) throw Error(ErrorKind::Io, "cannot write " + out_path.string());
  o << out.str();
  return inlined;
}

}  // namespace dialog_forge
