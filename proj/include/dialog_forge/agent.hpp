#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dialog_forge {

enum class Role {
  Describer,
  GuesserTurn,
  GuesserSummary,
  SelfQAQuestion,
  SelfQAAnswer,
  SuccessDetection,
  YesNoJudge,
  Embedding,
};

/// Wire names, e.g. "SelfQA-Question".
std::string_view role_name(Role role) noexcept;
std::optional<Role> parse_role(std::string_view name) noexcept;

struct SamplingParams {
  double top_p = 0.8;
  double temperature = 1.0;

  /// Dialog generation: nucleus sampling over the top 0.8 of the mass.
  static constexpr SamplingParams generation() noexcept { return {0.8, 1.0}; }
  /// Evaluation and validation replays: temperature 0.
  static constexpr SamplingParams evaluation() noexcept { return {0.8, 0.0}; }

  bool valid() const noexcept { return top_p > 0.0 && top_p <= 1.0 && temperature >= 0.0; }
  friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

struct InlineImage {
  std::string b64;
  std::string media_type;
  friend bool operator==(const InlineImage&, const InlineImage&) = default;
};

struct UriImage {
  std::string uri;
  friend bool operator==(const UriImage&, const UriImage&) = default;
};

using ImageRef = std::variant<InlineImage, UriImage>;

struct PromptPayload {
  Role role = Role::Describer;
  std::string text;
  std::vector<ImageRef> images;
  SamplingParams sampling;
  friend bool operator==(const PromptPayload&, const PromptPayload&) = default;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Substitutes the role's template. Image placeholders render as `<image_k>`
/// markers pointing at `images[k-1]`. GuesserTurn uses the robotics variant
/// when a `task` binding is present and scales its image clauses to
/// `images.size()`.
PromptPayload render_prompt(Role role, const Bindings& bindings, std::vector<ImageRef> images,
                            SamplingParams sampling = SamplingParams::generation());

/// GuesserTurn prompt followed by the instruction that no questions remain.
PromptPayload render_forced_guess(const Bindings& bindings, std::vector<ImageRef> images,
                                  SamplingParams sampling = SamplingParams::generation());

/// Marker line appended by render_forced_guess.
inline constexpr std::string_view kForcedGuessInstruction =
    "You have no questions left. You must now make a guess in the format:\n"
    "Answer: I know the answer, it is image X.";

/// True when the text still holds a `{placeholder}` known to any template.
bool has_unbound_placeholder(std::string_view text);

struct Question {
  std::string text;
  friend bool operator==(const Question&, const Question&) = default;
};

struct Guess {
  int index = 0;  // 1-based
  friend bool operator==(const Guess&, const Guess&) = default;
};

using GuesserAction = std::variant<Question, Guess>;

/// Only the first line starting with "Question:" or "Answer:" (case-insensitive,
/// after trimming) is considered. Throws Unparseable or IndexOutOfRange.
GuesserAction parse_guesser_output(std::string_view raw, int n_images);

/// Canonical rendering; parse_guesser_output inverts it.
std::string format_action(const GuesserAction& action);

/// Describer reply with an optional leading "Answer:" marker removed.
/// Throws EmptyResponse when nothing remains.
std::string parse_describer_output(std::string_view raw);

/// Question text from a Self-QA question reply: the first "Question:" line, or a
/// bare single-line reply ending in "?".
std::optional<std::string> parse_self_qa_question(std::string_view raw);

struct QaPair {
  std::string question;
  std::string answer;
  friend bool operator==(const QaPair&, const QaPair&) = default;
};

/// One transcript line "Question: ... Answer: ..."; the last "Answer:" splits it.
std::optional<QaPair> parse_qa_pair(std::string_view line);

namespace text {
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept;
std::vector<std::string_view> split_lines(std::string_view s);
}  // namespace text

}  // namespace dialog_forge
