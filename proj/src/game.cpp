#include "dialog_forge/game.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include <fmt/format.h>

#include "dialog_forge/error.hpp"

namespace dialog_forge {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Clock fixed_clock(std::string stamp) {
  return [stamp = std::move(stamp)] { return stamp; };
}

namespace {

struct GameAborted {
  AbortReason reason;
  std::string detail;
};

bool rerollable(ErrorKind kind) {
  return kind == ErrorKind::Unparseable || kind == ErrorKind::IndexOutOfRange || kind == ErrorKind::EmptyResponse;
}

class Session {
 public:
  Session(const GameSpec& spec, const GameOptions& options) : spec_(spec), options_(options) {}

  std::string call(const AgentEndpoint& endpoint, const PromptPayload& payload) {
    try {
      return endpoint.invoke(payload, InvocationContext{spec_.game_id, spec_.seed, seq_++});
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::EmptyResponse) throw;
      throw GameAborted{AbortReason::BackendFailure, e.what()};
    }
  }

  GuesserAction guesser_action(const AgentEndpoint& guesser, const PromptPayload& payload, bool summary_empty,
                               std::string& raw) {
    std::string last_error;
    for (int attempt = 0; attempt <= options_.parse_retries; ++attempt) {
      try {
        raw = call(guesser, payload);
        auto action = parse_guesser_output(raw, static_cast<int>(spec_.n()));
        if (std::holds_alternative<Guess>(action) && summary_empty && !options_.allow_guess_on_empty_summary) {
          throw Error(ErrorKind::Unparseable, "guess made while the image description is empty");
        }
        return action;
      } catch (const Error& e) {
        if (!rerollable(e.kind())) throw;
        last_error = e.what();
      }
    }
    throw GameAborted{AbortReason::ParseFailure, last_error};
  }

  std::string text_reply(const AgentEndpoint& endpoint, const PromptPayload& payload, bool describer) {
    std::string last_error;
    for (int attempt = 0; attempt <= options_.parse_retries; ++attempt) {
      try {
        std::string raw = call(endpoint, payload);
        return describer ? raw : text::trim(raw);
      } catch (const Error& e) {
        if (!rerollable(e.kind())) throw;
        last_error = e.what();
      }
    }
    throw GameAborted{AbortReason::BackendFailure, last_error};
  }

 private:
  const GameSpec& spec_;
  const GameOptions& options_;
  std::uint32_t seq_ = 0;
};

Bindings guesser_bindings(const GameSpec& spec, const std::string& summary) {
  Bindings b{{"image_description", summary}};
  if (spec.task_label) b.emplace("task", *spec.task_label);
  return b;
}

}  // namespace

DialogRecord run_game(const GameSpec& spec, const Corpus& corpus, const AgentEndpoint& describer,
                      const AgentEndpoint& guesser, const GameOptions& options) {
  spec.validate();
  const std::vector<ImageRef> guesser_images = corpus.image_refs(spec.image_ids);
  const ImageRef target_image = corpus.image_ref(spec.target_id());

  DialogRecord record;
  record.spec = spec;
  record.describer_endpoint = describer.name();
  record.guesser_endpoint = guesser.name();
  record.created_at = options.clock ? options.clock() : utc_now();

  Session session(spec, options);
  std::string summary;
  try {
    while (true) {
      std::string raw_guesser;
      if (static_cast<int>(record.turns.size()) >= spec.max_turns) {
        const auto payload = render_forced_guess(guesser_bindings(spec, summary), guesser_images, options.generation);
        // The forced prompt overrides the empty-description rule.
        const auto action = session.guesser_action(guesser, payload, false, raw_guesser);
        if (std::holds_alternative<Question>(action)) {
          throw GameAborted{AbortReason::TurnBudgetExhausted,
                            "forced guess still asked: " + std::get<Question>(action).text};
        }
        record.final_action = std::get<Guess>(action);
        break;
      }

      const auto payload =
          render_prompt(Role::GuesserTurn, guesser_bindings(spec, summary), guesser_images, options.generation);
      const auto action = session.guesser_action(guesser, payload, text::trim(summary).empty(), raw_guesser);
      if (const auto* guess = std::get_if<Guess>(&action)) {
        record.final_action = *guess;
        break;
      }

      Turn turn;
      turn.question = std::get<Question>(action).text;
      turn.raw_guesser_output = std::move(raw_guesser);

      const auto describer_payload =
          render_prompt(Role::Describer, {{"question", turn.question}}, {target_image}, options.generation);
      turn.raw_describer_output = session.text_reply(describer, describer_payload, true);
      try {
        turn.answer = parse_describer_output(turn.raw_describer_output);
      } catch (const Error& e) {
        throw GameAborted{AbortReason::BackendFailure, e.what()};
      }

      const auto summary_payload = render_prompt(
          Role::GuesserSummary, {{"description", summary}, {"question", turn.question}, {"answer", turn.answer}}, {},
          options.generation);
      summary = session.text_reply(guesser, summary_payload, false);
      turn.summary_after = summary;
      record.turns.push_back(std::move(turn));
    }
    record.outcome = record.final_action->index == spec.target_index ? Outcome::Success : Outcome::Failure;
  } catch (const GameAborted& aborted) {
    record.final_action.reset();
    record.outcome = Outcome::Aborted;
    record.aborted_reason = aborted.reason;
    record.abort_detail = aborted.detail;
  }
  return record;
}

ReplayResult replay_guess(const DialogRecord& dialog, const std::vector<std::string>& image_order,
                          const Corpus& corpus, const AgentEndpoint& guesser, const GameOptions& options,
                          std::uint32_t replay_ordinal) {
  if (!dialog.succeeded()) {
    throw Error(ErrorKind::NotSuccessful, dialog.spec.game_id + " is not a successful dialog");
  }
  auto sorted_order = image_order;
  auto sorted_ids = dialog.spec.image_ids;
  std::sort(sorted_order.begin(), sorted_order.end());
  std::sort(sorted_ids.begin(), sorted_ids.end());
  if (sorted_order != sorted_ids) {
    throw Error(ErrorKind::InvalidSpec, "replay order is not a permutation of the game's images");
  }

  const auto payload = render_forced_guess(guesser_bindings(dialog.spec, dialog.final_summary()),
                                           corpus.image_refs(image_order), options.replay);
  std::string last_error;
  for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
    // Replay call sequences live far above any in-game sequence number.
    const InvocationContext ctx{dialog.spec.game_id, dialog.spec.seed,
                                0x40000000u + replay_ordinal * 64u + static_cast<std::uint32_t>(attempt)};
    try {
      const auto action = parse_guesser_output(guesser.invoke(payload, ctx), static_cast<int>(image_order.size()));
      if (const auto* guess = std::get_if<Guess>(&action)) {
        return ReplayResult{guess->index, image_order[static_cast<std::size_t>(guess->index - 1)]};
      }
      last_error = "replay produced a question instead of a guess";
    } catch (const Error& e) {
      if (!rerollable(e.kind())) throw Error(ErrorKind::ReplayFailed, e.what());
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::ReplayFailed, fmt::format("{}: {}", dialog.spec.game_id, last_error));
}

}  // namespace dialog_forge
