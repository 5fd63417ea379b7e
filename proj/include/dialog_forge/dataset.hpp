#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/dialog.hpp"
#include "dialog_forge/filter.hpp"

namespace dialog_forge {

/// (image, question) -> answer.
struct DescriberExample {
  std::string image_id;
  std::string question;
  std::string answer;
  friend bool operator==(const DescriberExample&, const DescriberExample&) = default;
};

/// (all game images, summary) -> question or guess sentence.
struct GuesserExample {
  std::vector<std::string> image_ids;
  std::string summary;
  std::string target_text;
  std::optional<std::string> task;
  /// The decision was made under the no-questions-left prompt.
  bool forced = false;
  friend bool operator==(const GuesserExample&, const GuesserExample&) = default;
};

/// image -> task description (SFT-Description baseline).
struct DescriptionExample {
  std::string image_id;
  std::string description;
  friend bool operator==(const DescriptionExample&, const DescriptionExample&) = default;
};

/// (description, question, answer) -> next summary. Only with emit_summaries.
struct SummaryExample {
  std::string description;
  std::string question;
  std::string answer;
  std::string summary;
  friend bool operator==(const SummaryExample&, const SummaryExample&) = default;
};

using ExampleBody = std::variant<DescriberExample, GuesserExample, DescriptionExample, SummaryExample>;

struct TrainingExample {
  ExampleBody body;
  std::string source_game_id;  // empty for examples not taken from a game
  int round_tag = 1;

  std::string_view variant() const noexcept;
  const std::string& target_text() const;
  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

struct ExtractOptions {
  int round_tag = 1;
  bool emit_summaries = false;
};

/// k Describer and k + 1 Guesser examples for a k-turn dialog, in dialog
/// order. Throws NotRetained unless `report` is a passing report for it.
std::vector<TrainingExample> extract_examples(const DialogRecord& dialog, const ValidationReport& report,
                                              const ExtractOptions& options = {});

enum class DatasetMode { Full, AnswersOnly };
std::string_view to_string(DatasetMode mode) noexcept;
std::optional<DatasetMode> parse_dataset_mode(std::string_view name) noexcept;

struct DatasetCounts {
  std::map<std::string, std::size_t> per_variant;  // after dedup
  std::map<std::string, std::size_t> before_dedup;
  std::size_t total = 0;
  std::size_t duplicates_removed = 0;
  std::size_t skipped = 0;  // items dropped upstream (unparseable, backend failure)
  friend bool operator==(const DatasetCounts&, const DatasetCounts&) = default;
};

struct Dataset {
  std::vector<TrainingExample> examples;
  DatasetCounts counts;
  std::string mode;
  int round_tag = 1;
  /// Per-item problems that did not abort the build.
  std::vector<std::string> log;
};

/// Dedups on the full example content (game id and round ignored), keeping
/// the first occurrence, then fills counts.
void finalize_dataset(Dataset& dataset);

/// Examples of every retained dialog, ordered by game id then dialog
/// position. Throws NotRetained for a dialog without a passing report.
Dataset build_sft_dataset(std::span<const DialogRecord> retained, std::span<const ValidationReport> reports,
                          DatasetMode mode, const ExtractOptions& options = {});

struct SelfQaOptions {
  std::uint64_t seed = 0;
  int round_tag = 1;
  SamplingParams sampling = SamplingParams::generation();
  int concurrency = 1;
};

/// Self-QA: a question then its answer for every image, per_image times.
/// Unparseable questions and backend failures are logged and counted.
Dataset build_self_qa_dataset(const Corpus& corpus, const AgentEndpoint& question_agent,
                              const AgentEndpoint& answer_agent, int per_image, const SelfQaOptions& options = {});

/// One (image -> task_label) example per record. Throws MissingLabel.
Dataset build_description_sft(const Corpus& corpus, int round_tag = 1);

// ---------------------------------------------------------------------------
// Serialization

/// Maps an image id to the reference written into `inputs`.
using ImageResolver = std::function<std::string(const std::string& image_id)>;
ImageResolver corpus_resolver(const Corpus& corpus);

/// {inputs:[{text}|{image_ref}], target_text, meta:{variant, game_id, round, ...}}.
/// `inputs` interleaves the rendered prompt text with its images.
std::string to_jsonl(const TrainingExample& example, const ImageResolver& resolve = {});
TrainingExample example_from_json(std::string_view line);

/// Writes one line per example; returns the SHA-256 of the file bytes.
std::string write_dataset(const Dataset& dataset, const std::filesystem::path& path,
                          const ImageResolver& resolve = {});
std::vector<TrainingExample> read_dataset(const std::filesystem::path& path);

/// {counts, source_run_id, mode, round_tag, content_hash}.
std::string manifest_json(const Dataset& dataset, std::string_view source_run_id, std::string_view content_hash);

/// Rewrites every {image_ref} input as {b64, media_type}, resolving relative
/// paths against `base_dir`. Throws DanglingContentRef for unreadable refs.
/// Returns the number of images inlined.
std::size_t export_inline(const std::filesystem::path& in, const std::filesystem::path& out,
                          const std::filesystem::path& base_dir);

}  // namespace dialog_forge
