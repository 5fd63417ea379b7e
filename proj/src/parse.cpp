#include <cctype>
#include <charconv>

#include <fmt/format.h>

#include "dialog_forge/agent.hpp"
#include "dialog_forge/error.hpp"

namespace dialog_forge {

namespace text {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    auto line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

}  // namespace text

namespace {

constexpr std::string_view kQuestionMarker = "question:";
constexpr std::string_view kAnswerMarker = "answer:";

std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> words;
  std::string current;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u) || c == ',' || c == '.') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current += static_cast<char>(std::tolower(u));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

// "I know the answer, it is image X." with tolerant spacing, casing and punctuation.
std::optional<long> guess_index(std::string_view body) {
  static const std::vector<std::string> kExpected = {"i", "know", "the", "answer", "it", "is", "image"};
  const auto words = words_of(body);
  if (words.size() != kExpected.size() + 1) return std::nullopt;
  for (std::size_t i = 0; i < kExpected.size(); ++i) {
    if (words[i] != kExpected[i]) return std::nullopt;
  }
  const auto& digits = words.back();
  long value = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return value;
}

}  // namespace

GuesserAction parse_guesser_output(std::string_view raw, int n_images) {
  for (auto line : text::split_lines(raw)) {
    const std::string trimmed = text::trim(line);
    if (text::starts_with_icase(trimmed, kAnswerMarker)) {
      const auto index = guess_index(std::string_view(trimmed).substr(kAnswerMarker.size()));
      if (!index) throw Error(ErrorKind::Unparseable, "answer line does not name an image index");
      if (*index < 1 || *index > n_images) {
        throw Error(ErrorKind::IndexOutOfRange,
                    fmt::format("image {} outside [1, {}]", *index, n_images));
      }
      return Guess{static_cast<int>(*index)};
    }
    if (text::starts_with_icase(trimmed, kQuestionMarker)) {
      std::string question = text::trim(std::string_view(trimmed).substr(kQuestionMarker.size()));
      if (question.empty()) throw Error(ErrorKind::Unparseable, "empty question");
      return Question{std::move(question)};
    }
  }
  throw Error(ErrorKind::Unparseable, "no Question:/Answer: marker line");
}

std::string format_action(const GuesserAction& action) {
  if (const auto* g = std::get_if<Guess>(&action)) {
    return fmt::format("Answer: I know the answer, it is image {}.", g->index);
  }
  return "Question: " + std::get<Question>(action).text;
}

std::string parse_describer_output(std::string_view raw) {
  std::string answer = text::trim(raw);
  if (text::starts_with_icase(answer, kAnswerMarker)) {
    answer = text::trim(std::string_view(answer).substr(kAnswerMarker.size()));
  }
  if (answer.empty()) throw Error(ErrorKind::EmptyResponse, "blank describer answer");
  return answer;
}

std::optional<std::string> parse_self_qa_question(std::string_view raw) {
  for (auto line : text::split_lines(raw)) {
    const std::string trimmed = text::trim(line);
    if (text::starts_with_icase(trimmed, kQuestionMarker)) {
      std::string q = text::trim(std::string_view(trimmed).substr(kQuestionMarker.size()));
      if (q.empty()) return std::nullopt;
      return q;
    }
  }
  // The prompt itself ends with the marker, so a bare one-line question continues it.
  const std::string whole = text::trim(raw);
  if (!whole.empty() && whole.back() == '?' && whole.find('\n') == std::string::npos) return whole;
  return std::nullopt;
}

std::optional<QaPair> parse_qa_pair(std::string_view line) {
  const std::string trimmed = text::trim(line);
  if (!text::starts_with_icase(trimmed, kQuestionMarker)) return std::nullopt;
  const std::string lower = text::to_lower(trimmed);
  const auto at = lower.rfind(kAnswerMarker);
  if (at == std::string::npos || at < kQuestionMarker.size()) return std::nullopt;
  QaPair pair{text::trim(std::string_view(trimmed).substr(kQuestionMarker.size(), at - kQuestionMarker.size())),
              text::trim(std::string_view(trimmed).substr(at + kAnswerMarker.size()))};
  if (pair.question.empty() || pair.answer.empty()) return std::nullopt;
  return pair;
}

}  // namespace dialog_forge
