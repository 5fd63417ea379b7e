#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dialog_forge/agent.hpp"
#include "dialog_forge/dialog.hpp"

namespace dialog_forge {

struct ImageRecord {
  std::string image_id;
  std::string content_ref;  // URI or path relative to the manifest
  std::optional<std::string> cluster_key;
  std::optional<std::string> episode_id;
  std::optional<std::string> task_label;
  std::optional<int> frame_index;
  std::optional<Eigen::VectorXd> embedding;
  std::map<std::string, std::string> attributes;
};

class Corpus {
 public:
  Corpus() = default;
  /// Throws DuplicateId, or ParseError on mixed embedding dimensions or a
  /// frame_index without an episode_id.
  Corpus(std::string corpus_id, std::vector<ImageRecord> records, std::string provenance = {});

  const std::string& id() const noexcept { return corpus_id_; }
  const std::string& provenance() const noexcept { return provenance_; }
  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const ImageRecord* find(std::string_view image_id) const;
  /// Throws CorpusMiss.
  const ImageRecord& at(std::string_view image_id) const;
  /// The reference handed to agents for this image.
  ImageRef image_ref(std::string_view image_id) const;
  std::vector<ImageRef> image_refs(const std::vector<std::string>& ids) const;

 private:
  std::string corpus_id_;
  std::string provenance_;
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct ManifestOptions {
  bool verify_content_refs = false;  // DanglingContentRef on missing local files
  std::optional<std::string> corpus_id;  // defaults to the header line or the file stem
};

/// JSONL, one ImageRecord per line. An optional leading header object
/// {corpus_id, provenance} is accepted. Embeddings are inline arrays or
/// `embedding_ref: {path, offset, dim}` into a little-endian float32 sidecar.
Corpus load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
void write_manifest(const Corpus& corpus, const std::filesystem::path& path);

struct GroupOptions {
  int max_turns = 3;
  std::string id_prefix = "game-";
};

enum class FramePairing { SameEpisode, SameTask };

/// n images from one cluster per game; clusters drawn with replacement.
std::vector<GameSpec> group_by_cluster(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                       const GroupOptions& options = {});

/// Random target, distractors are its n-1 nearest neighbours by cosine
/// similarity (ties by ascending image id).
std::vector<GameSpec> group_by_similarity(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                          const GroupOptions& options = {});

std::vector<GameSpec> group_random(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                   const GroupOptions& options = {});

/// Two frames per game, grouped per task label (tasks in sorted order).
std::vector<GameSpec> group_episode_frames(const Corpus& corpus, int games_per_task, std::uint64_t seed,
                                           FramePairing pairing = FramePairing::SameEpisode,
                                           const GroupOptions& options = {});

/// The highest-frame_index record of every episode, in corpus order.
Corpus final_frames(const Corpus& corpus);

}  // namespace dialog_forge
