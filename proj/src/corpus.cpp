#include "dialog_forge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "dialog_forge/embedding.hpp"
#include "dialog_forge/error.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

Corpus::Corpus(std::string corpus_id, std::vector<ImageRecord> records, std::string provenance)
    : corpus_id_(std::move(corpus_id)), provenance_(std::move(provenance)), records_(std::move(records)) {
  std::optional<Eigen::Index> dim;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.image_id.empty()) throw Error(ErrorKind::ParseError, fmt::format("record {} has an empty image_id", i));
    if (!by_id_.emplace(r.image_id, i).second) {
      throw Error(ErrorKind::DuplicateId, fmt::format("image_id `{}` appears twice", r.image_id));
    }
    if (r.frame_index && !r.episode_id) {
      throw Error(ErrorKind::ParseError, fmt::format("`{}` has frame_index but no episode_id", r.image_id));
    }
    if (r.embedding) {
      if (dim && *dim != r.embedding->size()) {
        throw Error(ErrorKind::ParseError, fmt::format("`{}` has embedding dimension {}, corpus uses {}",
                                                       r.image_id, r.embedding->size(), *dim));
      }
      dim = r.embedding->size();
    }
  }
}

const ImageRecord* Corpus::find(std::string_view image_id) const {
  const auto it = by_id_.find(std::string(image_id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const ImageRecord& Corpus::at(std::string_view image_id) const {
  if (const auto* r = find(image_id)) return *r;
  throw Error(ErrorKind::CorpusMiss, fmt::format("unknown image id `{}` in corpus `{}`", image_id, corpus_id_));
}

ImageRef Corpus::image_ref(std::string_view image_id) const { return UriImage{at(image_id).content_ref}; }

std::vector<ImageRef> Corpus::image_refs(const std::vector<std::string>& ids) const {
  std::vector<ImageRef> refs;
  refs.reserve(ids.size());
  for (const auto& id : ids) refs.push_back(image_ref(id));
  return refs;
}

// ---------------------------------------------------------------------------
// Manifest IO

namespace {

Eigen::VectorXd read_sidecar(const fs::path& file, std::uint64_t offset, std::int64_t dim) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open embedding sidecar " + file.string());
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<float> buf(static_cast<std::size_t>(dim));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw Error(ErrorKind::ParseError, fmt::format("sidecar {} too short at offset {}", file.string(), offset));
  Eigen::VectorXd v(dim);
  for (std::int64_t i = 0; i < dim; ++i) v[i] = buf[static_cast<std::size_t>(i)];
  return v;
}

bool is_uri(std::string_view ref) { return ref.find("://") != std::string_view::npos; }

ImageRecord record_from_json(const nlohmann::json& j, const fs::path& base_dir, std::size_t line_no) {
  auto fail = [&](const std::string& what) {
    return Error(ErrorKind::ParseError, fmt::format("manifest line {}: {}", line_no, what));
  };
  ImageRecord r;
  try {
    if (!j.contains("image_id") || !j["image_id"].is_string()) throw fail("missing string `image_id`");
    r.image_id = j["image_id"].get<std::string>();
    r.content_ref = j.value("content_ref", std::string());
    if (j.contains("cluster_key") && !j["cluster_key"].is_null()) r.cluster_key = j["cluster_key"].get<std::string>();
    if (j.contains("episode_id") && !j["episode_id"].is_null()) r.episode_id = j["episode_id"].get<std::string>();
    if (j.contains("task_label") && !j["task_label"].is_null()) r.task_label = j["task_label"].get<std::string>();
    if (j.contains("frame_index") && !j["frame_index"].is_null()) r.frame_index = j["frame_index"].get<int>();
    if (j.contains("embedding") && !j["embedding"].is_null()) {
      const auto values = j["embedding"].get<std::vector<double>>();
      r.embedding = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    } else if (j.contains("embedding_ref")) {
      const auto& ref = j["embedding_ref"];
      r.embedding = read_sidecar(base_dir / ref.at("path").get<std::string>(), ref.value("offset", std::uint64_t{0}),
                                 ref.at("dim").get<std::int64_t>());
    }
    if (j.contains("attributes") && j["attributes"].is_object()) {
      for (const auto& [k, v] : j["attributes"].items()) {
        r.attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  return r;
}

}  // namespace

Corpus load_manifest(const fs::path& path, const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open manifest " + path.string());
  std::string corpus_id = path.stem().string();
  std::string provenance;
  std::vector<ImageRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorKind::ParseError, fmt::format("manifest line {} is not a JSON object", line_no));
    }
    if (records.empty() && !j.contains("image_id") && j.contains("corpus_id")) {
      corpus_id = j["corpus_id"].get<std::string>();
      provenance = j.value("provenance", std::string());
      continue;
    }
    records.push_back(record_from_json(j, path.parent_path(), line_no));
  }
  if (options.corpus_id) corpus_id = *options.corpus_id;
  if (options.verify_content_refs) {
    for (const auto& r : records) {
      if (r.content_ref.empty() || (!is_uri(r.content_ref) && !fs::exists(path.parent_path() / r.content_ref))) {
        throw Error(ErrorKind::DanglingContentRef, fmt::format("`{}` -> `{}`", r.image_id, r.content_ref));
      }
    }
  }
  return Corpus(std::move(corpus_id), std::move(records), std::move(provenance));
}

void write_manifest(const Corpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
  ordered_json header;
  header["corpus_id"] = corpus.id();
  if (!corpus.provenance().empty()) header["provenance"] = corpus.provenance();
  out << header.dump() << '\n';
  for (const auto& r : corpus.records()) {
    ordered_json j;
    j["image_id"] = r.image_id;
    j["content_ref"] = r.content_ref;
    if (r.cluster_key) j["cluster_key"] = *r.cluster_key;
    if (r.episode_id) j["episode_id"] = *r.episode_id;
    if (r.task_label) j["task_label"] = *r.task_label;
    if (r.frame_index) j["frame_index"] = *r.frame_index;
    if (r.embedding) j["embedding"] = std::vector<double>(r.embedding->begin(), r.embedding->end());
    if (!r.attributes.empty()) j["attributes"] = r.attributes;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Grouping

namespace {

GameSpec make_spec(const Corpus& corpus, std::vector<std::string> ids, int target_index, std::size_t ordinal,
                   std::uint64_t seed, const GroupOptions& options) {
  GameSpec spec;
  spec.game_id = fmt::format("{}{:06d}", options.id_prefix, ordinal);
  spec.image_ids = std::move(ids);
  spec.target_index = target_index;
  spec.max_turns = options.max_turns;
  spec.corpus_id = corpus.id();
  spec.seed = derive_seed(seed, spec.game_id);
  return spec;
}

void require_positive(int n, int games) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "n must be at least 1");
  if (games < 0) throw Error(ErrorKind::InvalidConfig, "games must be non-negative");
}

}  // namespace

std::vector<GameSpec> group_by_cluster(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                       const GroupOptions& options) {
  require_positive(n, games);
  std::map<std::string, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (const auto& key = corpus.records()[i].cluster_key) clusters[*key].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> eligible;
  for (const auto& [key, members] : clusters) {
    if (members.size() >= static_cast<std::size_t>(n)) eligible.push_back(&members);
  }
  if (eligible.empty()) {
    throw Error(ErrorKind::InsufficientCluster, fmt::format("no cluster has {} members", n));
  }
  Rng rng(seed);
  std::vector<GameSpec> specs;
  specs.reserve(static_cast<std::size_t>(games));
  for (int g = 0; g < games; ++g) {
    const auto& members = *eligible[rng.below(eligible.size())];
    std::vector<std::string> ids;
    for (auto idx : rng.sample_indices(members.size(), static_cast<std::size_t>(n))) {
      ids.push_back(corpus.records()[members[idx]].image_id);
    }
    const int target = static_cast<int>(rng.below(static_cast<std::uint64_t>(n))) + 1;
    specs.push_back(make_spec(corpus, std::move(ids), target, specs.size(), seed, options));
  }
  return specs;
}

std::vector<GameSpec> group_by_similarity(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                          const GroupOptions& options) {
  require_positive(n, games);
  if (corpus.size() < static_cast<std::size_t>(n)) {
    throw Error(ErrorKind::InsufficientCorpus, fmt::format("corpus has {} images, need {}", corpus.size(), n));
  }
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(corpus.size());
  for (const auto& r : corpus.records()) {
    if (!r.embedding) throw Error(ErrorKind::MissingEmbedding, fmt::format("`{}` has no embedding", r.image_id));
    rows.push_back(*r.embedding);
  }
  const EmbeddingIndex<double> index(rows);
  const auto& records = corpus.records();

  Rng rng(seed);
  std::vector<GameSpec> specs;
  specs.reserve(static_cast<std::size_t>(games));
  std::vector<std::size_t> candidates(corpus.size() - 1);
  for (int g = 0; g < games; ++g) {
    const auto target = static_cast<std::size_t>(rng.below(corpus.size()));
    const Eigen::VectorXd sims = index.similarities_to(static_cast<Eigen::Index>(target));
    std::size_t k = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (i != target) candidates[k++] = i;
    }
    const auto distractors = static_cast<std::size_t>(n - 1);
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(distractors),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                        const double sa = sims[static_cast<Eigen::Index>(a)];
                        const double sb = sims[static_cast<Eigen::Index>(b)];
                        if (sa != sb) return sa > sb;
                        return records[a].image_id < records[b].image_id;
                      });
    std::vector<std::string> ids{records[target].image_id};
    for (std::size_t i = 0; i < distractors; ++i) ids.push_back(records[candidates[i]].image_id);
    rng.shuffle(ids);
    const auto pos = std::find(ids.begin(), ids.end(), records[target].image_id) - ids.begin();
    specs.push_back(make_spec(corpus, std::move(ids), static_cast<int>(pos) + 1, specs.size(), seed, options));
  }
  return specs;
}

std::vector<GameSpec> group_random(const Corpus& corpus, int n, int games, std::uint64_t seed,
                                   const GroupOptions& options) {
  require_positive(n, games);
  if (corpus.size() < static_cast<std::size_t>(n)) {
    throw Error(ErrorKind::InsufficientCorpus, fmt::format("corpus has {} images, need {}", corpus.size(), n));
  }
  Rng rng(seed);
  std::vector<GameSpec> specs;
  specs.reserve(static_cast<std::size_t>(games));
  for (int g = 0; g < games; ++g) {
    std::vector<std::string> ids;
    for (auto idx : rng.sample_indices(corpus.size(), static_cast<std::size_t>(n))) {
      ids.push_back(corpus.records()[idx].image_id);
    }
    const int target = static_cast<int>(rng.below(static_cast<std::uint64_t>(n))) + 1;
    specs.push_back(make_spec(corpus, std::move(ids), target, specs.size(), seed, options));
  }
  return specs;
}

std::vector<GameSpec> group_episode_frames(const Corpus& corpus, int games_per_task, std::uint64_t seed,
                                           FramePairing pairing, const GroupOptions& options) {
  require_positive(2, games_per_task);
  // task -> episode -> frames (corpus order)
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> tasks;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus.records()[i];
    if (!r.task_label || !r.episode_id || !r.frame_index) {
      throw Error(ErrorKind::InsufficientFrames,
                  fmt::format("`{}` lacks episode_id/task_label/frame_index", r.image_id));
    }
    tasks[*r.task_label][*r.episode_id].push_back(i);
  }
  if (tasks.empty()) throw Error(ErrorKind::InsufficientFrames, "corpus has no frames");

  Rng rng(seed);
  std::vector<GameSpec> specs;
  for (const auto& [task, episodes] : tasks) {
    std::vector<std::vector<std::size_t>> pools;
    if (pairing == FramePairing::SameEpisode) {
      for (const auto& [episode, frames] : episodes) {
        if (frames.size() >= 2) pools.push_back(frames);
      }
    } else {
      std::vector<std::size_t> all;
      for (const auto& [episode, frames] : episodes) all.insert(all.end(), frames.begin(), frames.end());
      if (all.size() >= 2) pools.push_back(std::move(all));
    }
    if (pools.empty()) {
      throw Error(ErrorKind::InsufficientFrames, fmt::format("task `{}` has no pool with two frames", task));
    }
    for (int g = 0; g < games_per_task; ++g) {
      const auto& pool = pools[rng.below(pools.size())];
      std::vector<std::string> ids;
      for (auto idx : rng.sample_indices(pool.size(), 2)) ids.push_back(corpus.records()[pool[idx]].image_id);
      const int target = static_cast<int>(rng.below(2)) + 1;
      auto spec = make_spec(corpus, std::move(ids), target, specs.size(), seed, options);
      spec.task_label = task;
      specs.push_back(std::move(spec));
    }
  }
  return specs;
}

Corpus final_frames(const Corpus& corpus) {
  std::map<std::string, std::size_t> last;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus.records()[i];
    if (!r.episode_id) continue;
    auto [it, inserted] = last.emplace(*r.episode_id, i);
    if (!inserted && r.frame_index.value_or(0) > corpus.records()[it->second].frame_index.value_or(0)) it->second = i;
  }
  std::vector<std::size_t> keep;
  for (const auto& [episode, idx] : last) keep.push_back(idx);
  std::sort(keep.begin(), keep.end());
  std::vector<ImageRecord> out;
  for (auto idx : keep) out.push_back(corpus.records()[idx]);
  return Corpus(corpus.id() + "-final", std::move(out), corpus.provenance());
}

}  // namespace dialog_forge
