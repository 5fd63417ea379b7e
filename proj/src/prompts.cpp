#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include <fmt/format.h>

#include "dialog_forge/agent.hpp"
#include "dialog_forge/error.hpp"

namespace dialog_forge {
namespace {

constexpr std::string_view kDescriberTemplate =
    "You are given an image and your task is to answer a given question about it. Be precise "
    "and accurate. Only answer the question, do not say anything else about the image.\n"
    "Image: {image}\n"
    "Question: {question}\n"
    "Answer:";

constexpr std::string_view kSummaryTemplate =
    "You are given a short description of a scene and one question and answer about it.\n"
    "Your task is to summarise the content of the scene in a short sentence or paragraph. Only "
    "provide a summary, do no output anything else.\n"
    "Always include all the details 1) from the description, 2) from question-answer pair into "
    "your summary.\n"
    "Description: {description}\n"
    "Question: {question}\n"
    "Answer: {answer}\n"
    "Your summary: ";

constexpr std::string_view kSelfQaQuestionTemplate =
    "You are given an image and your task is to ask a question about the content of this image.\n"
    "Try to ask objective, factual questions that cover the content of the image, but not the "
    "deductions about the scene or any impressions about the image.\n"
    "NEVER ask questions about the background of the robotic scene (e.g., people in the "
    "background, scooters or chairs).\n"
    "Follow the format:\n"
    "Question: put your question here.\n"
    "So, now given the image, ask a question.\n"
    "Image: {image}\n"
    "Question:";

constexpr std::string_view kSelfQaAnswerTemplate =
    "You are given an image and your task is to answer a given question about it. Be precise "
    "and accurate. Only answer the question, do not say anything else about the image.\n"
    "If possible, ONLY answer with *yes* or *no*.\n"
    "Image: {image}\n"
    "Question: {question}\n"
    "Answer:";

constexpr std::string_view kSuccessDetectionTemplate =
    "You are given an image from a scene where robot is trying to {task}. Your task is to answer "
    "a given question about it. Be precise and accurate. ONLY answer with *yes* or *no*.\n"
    "Image: {image}\n"
    "Question: {question}\n"
    "Answer:";

constexpr std::string_view kYesNoJudgeTemplate =
    "You are given a question and an answer to it. Decide whether the answer means yes or no.\n"
    "Question: {question}\n"
    "Answer: {answer}\n"
    "Reply with exactly one word: yes, no, or unclear.\n"
    "Verdict:";

constexpr std::string_view kEmbeddingTemplate = "Image: {image}";

constexpr std::array<std::string_view, 6> kTextPlaceholders = {
    "question", "image_description", "task", "description", "answer", "image"};

std::string joined(std::size_t n, std::string_view prefix, std::string_view sep) {
  std::string out;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i > 1) out += sep;
    out += fmt::format("{}{}", prefix, i);
  }
  return out;
}

std::string slot_line(std::size_t n) {
  std::string out;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i > 1) out += ' ';
    out += fmt::format("Image {0}: {{image{0}}}", i);
  }
  return out;
}

std::string general_guesser_template(std::size_t n) {
  const std::string list = joined(n, "Image ", ", ");
  return fmt::format(
      "You are given several images {0} and image description.\n"
      "This image description refers to only a single image, however, the image description "
      "might be incomplete.\n"
      "You task is the following:\n"
      "1) If the image description can only refer to a single image from the set of images ({0}) "
      "you should provide the answer in the format:\n"
      "Answer: I know the answer, it is image X.\n"
      "where X is the index of an image ({1}).\n"
      "Only provide a response in this format when you are absolutely certain to which image the "
      "image description refers to.\n"
      "Never provide an answer in this format when the image description is empty.\n"
      "2) If no image description is provided or the image description can refer to more than "
      "one image, your task is to ask additional question to narrow down the space of possible "
      "images from the set ({0}).\n"
      "Ask any question that would help you to narrow the space of possible images.\n"
      "Choose a question that would help you to maximise the information about the content of "
      "the target image.\n"
      "Try to ask objective, factual questions that cover the content of the image, but not the "
      "deductions about the scene or any impressions about the image.\n"
      "Follow the format:\n"
      "Question: put your question here.\n"
      "So, now given the image descriptions and {2} images, decide if you are going to make a "
      "guess (in that case produce an Answer) or ask a question (in that case produce a "
      "Question).\n"
      "Image description: {{image_description}}\n"
      "{3}",
      list, joined(n, "", ", "), n, slot_line(n));
}

std::string count_word(std::size_t n) {
  static constexpr std::array<std::string_view, 9> kWords = {
      "zero", "one", "two", "three", "four", "five", "six", "seven", "eight"};
  return n < kWords.size() ? std::string(kWords[n]) : std::to_string(n);
}

std::string robotics_guesser_template(std::size_t n) {
  const std::string list = joined(n, "Image ", ", ");
  return fmt::format(
      "You are given {4} images ({0}) from a scene where robot is trying to {{task}} and image "
      "description.\n"
      "This image description refers to only a single image, however, the image description "
      "might be incomplete.\n"
      "You task is the following:\n"
      "1) If the image description can only refer to a single image from the set of images ({0}) "
      "you should provide the answer in the format:\n"
      "Answer: I know the answer, it is image X.\n"
      "where X is the index of an image ({1}).\n"
      "Only provide an response in this format when you are absolutely certain to which image "
      "the image description refers.\n"
      "Never provide an answer in this format when the image description is empty.\n"
      "2) If no image description is provided or the image description can refer to more than "
      "one image, your task is to ask additional question to narrow down the space of possible "
      "images from the set ({0}).\n"
      "Try to ask objective, factual questions that cover the content of the image.\n"
      "Choose a question that would help you to maximise the information about the content of "
      "the image.\n"
      "NEVER ask questions about the background of the robotic scene (e.g., people in the "
      "background, scooters or chairs).\n"
      "NEVER ask questions about the facts that are already known from the image description.\n"
      "Follow the format:\n"
      "Question: put your question here\n"
      "\n"
      "So, now given the image descriptions and {2} images, decide if you are going to make a "
      "guess (in that case produce an Answer) or ask a question (in that case produce a "
      "Question).\n"
      "Image description: {{image_description}}\n"
      "{3}",
      list, joined(n, "", ","), n, slot_line(n), count_word(n));
}

bool is_placeholder_char(char c) noexcept {
  return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
         c == '_';
}

bool is_image_placeholder(std::string_view name, std::size_t& slot) {
  if (name == "image") {
    slot = 1;
    return true;
  }
  if (name.size() > 5 && name.starts_with("image") &&
      std::all_of(name.begin() + 5, name.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    slot = std::stoul(std::string(name.substr(5)));
    return true;
  }
  return false;
}

std::string substitute(std::string_view tmpl, const Bindings& bindings, std::size_t image_count) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::set<std::size_t> slots;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open + 1);
    const auto name = close == std::string_view::npos ? std::string_view{}
                                                       : tmpl.substr(open + 1, close - open - 1);
    if (name.empty() || !std::all_of(name.begin(), name.end(), is_placeholder_char)) {
      out.append(tmpl.substr(pos, open - pos + 1));
      pos = open + 1;
      continue;
    }
    out.append(tmpl.substr(pos, open - pos));
    std::size_t slot = 0;
    if (is_image_placeholder(name, slot)) {
      slots.insert(slot);
      out += fmt::format("<image_{}>", slot);
    } else if (auto it = bindings.find(name); it != bindings.end()) {
      out += it->second;
    } else {
      throw Error(ErrorKind::MissingBinding, fmt::format("placeholder {{{}}} is unbound", name));
    }
    pos = close + 1;
  }
  if (slots.size() != image_count) {
    throw Error(ErrorKind::SlotMismatch, fmt::format("template has {} image slots, got {} images",
                                                     slots.size(), image_count));
  }
  return out;
}

std::string template_for(Role role, const Bindings& bindings, std::size_t image_count) {
  switch (role) {
    case Role::Describer: return std::string(kDescriberTemplate);
    case Role::GuesserTurn:
      if (image_count == 0) throw Error(ErrorKind::SlotMismatch, "guesser needs at least one image");
      return bindings.contains("task") ? robotics_guesser_template(image_count)
                                       : general_guesser_template(image_count);
    case Role::GuesserSummary: return std::string(kSummaryTemplate);
    case Role::SelfQAQuestion: return std::string(kSelfQaQuestionTemplate);
    case Role::SelfQAAnswer: return std::string(kSelfQaAnswerTemplate);
    case Role::SuccessDetection: return std::string(kSuccessDetectionTemplate);
    case Role::YesNoJudge: return std::string(kYesNoJudgeTemplate);
    case Role::Embedding: return std::string(kEmbeddingTemplate);
  }
  throw Error(ErrorKind::InvalidPayload, "unknown role");
}

}  // namespace

std::string_view role_name(Role role) noexcept {
  switch (role) {
    case Role::Describer: return "Describer";
    case Role::GuesserTurn: return "GuesserTurn";
    case Role::GuesserSummary: return "GuesserSummary";
    case Role::SelfQAQuestion: return "SelfQA-Question";
    case Role::SelfQAAnswer: return "SelfQA-Answer";
    case Role::SuccessDetection: return "SuccessDetection";
    case Role::YesNoJudge: return "YesNoJudge";
    case Role::Embedding: return "Embedding";
  }
  return "";
}

std::optional<Role> parse_role(std::string_view name) noexcept {
  for (Role r : {Role::Describer, Role::GuesserTurn, Role::GuesserSummary, Role::SelfQAQuestion,
                 Role::SelfQAAnswer, Role::SuccessDetection, Role::YesNoJudge, Role::Embedding}) {
    if (role_name(r) == name) return r;
  }
  return std::nullopt;
}

PromptPayload render_prompt(Role role, const Bindings& bindings, std::vector<ImageRef> images,
                            SamplingParams sampling) {
  const std::string tmpl = template_for(role, bindings, images.size());
  PromptPayload payload;
  payload.role = role;
  payload.text = substitute(tmpl, bindings, images.size());
  payload.images = std::move(images);
  payload.sampling = sampling;
  return payload;
}

PromptPayload render_forced_guess(const Bindings& bindings, std::vector<ImageRef> images,
                                  SamplingParams sampling) {
  PromptPayload payload = render_prompt(Role::GuesserTurn, bindings, std::move(images), sampling);
  payload.text += '\n';
  payload.text += kForcedGuessInstruction;
  return payload;
}

bool has_unbound_placeholder(std::string_view text) {
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    const auto close = text.find('}', pos + 1);
    if (close == std::string_view::npos) return false;
    const auto name = text.substr(pos + 1, close - pos - 1);
    std::size_t slot = 0;
    if (is_image_placeholder(name, slot) ||
        std::find(kTextPlaceholders.begin(), kTextPlaceholders.end(), name) != kTextPlaceholders.end()) {
      return true;
    }
    pos += 1;
  }
  return false;
}

}  // namespace dialog_forge
