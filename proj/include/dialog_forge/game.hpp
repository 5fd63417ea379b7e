#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/dialog.hpp"

namespace dialog_forge {

/// Returns an RFC 3339 UTC timestamp.
using Clock = std::function<std::string()>;

std::string utc_now();
/// A clock that always reports `stamp`; used for byte-reproducible runs.
Clock fixed_clock(std::string stamp);

struct GameOptions {
  /// Rerolls (identical payload) after an unparseable or blank reply.
  int parse_retries = 2;
  /// The Guesser prompt forbids guessing on an empty description; such guesses
  /// are rerolled as unparseable unless this is set.
  bool allow_guess_on_empty_summary = false;
  SamplingParams generation = SamplingParams::generation();
  SamplingParams replay = SamplingParams::evaluation();
  Clock clock = utc_now;
};

/// Plays one game to completion. Throws CorpusMiss for unknown image ids and
/// InvalidSpec for a malformed spec; every agent-side failure becomes an
/// Aborted record instead.
DialogRecord run_game(const GameSpec& spec, const Corpus& corpus, const AgentEndpoint& describer,
                      const AgentEndpoint& guesser, const GameOptions& options = {});

struct ReplayResult {
  int position = 0;  // 1-based, within image_order
  std::string image_id;
};

/// Re-asks only the final selection, with the dialog's last summary and the
/// images in `image_order`, at the replay temperature. Throws NotSuccessful or
/// ReplayFailed.
ReplayResult replay_guess(const DialogRecord& dialog, const std::vector<std::string>& image_order,
                          const Corpus& corpus, const AgentEndpoint& guesser, const GameOptions& options = {},
                          std::uint32_t replay_ordinal = 0);

}  // namespace dialog_forge
