#include "fpbench/prompts.hpp"

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"

namespace fpbench::prompts {

namespace {

const char* kSeeSayHead =
    "Analyze the image and verify if there are any referred objects in the "
    "image. Yes or no with explanations. Here's an example. When asked \"is "
    "there any green car behind the man in the image\", you can answer the "
    "question in ways like:\n"
    "\n"
    "1. If the object exists, confirm it:\n"
    "\t- \"Yes, the green car hehind the man is present in the image.\"\n"
    "\n"
    "2. If not, deny the existence of the object and optionally provide "
    "alternative suggestions:\n"
    "\t- \"No, there is no green car in the image. Did you mean the red car "
    "in front of the man?\"\n"
    "\n";

const char* kSeeSayQuestionPrefix = "Now, my question is: \"Is there ";
const char* kSeeSayQuestionSuffix =
    " in the image?\" I value a precise and detailed analysis. Please "
    "inspect the image thoroughly and respond according to the guidelines "
    "provided above.";

const char* kSegmentPrefix = "Please help me segment ";
const char* kSegmentSuffix = " in the image";

const char* kFpAugmentHead = R"(## Your Role: Prank Expert

## Objective
Turn real object descriptions of an image into fictional but relevant ones by altering specific elements.

## Guidelines
- Change only one word in each sentence.
- Use unique word replacements in each sentence.
- Focus on modifying the main subject, its attributes, actions, or relationships to another relevant counterpart.
- Ensure altered descriptions do not coincide with any real objects in the original description.
- Be cautious when changing adjectives related to position (e.g., near/far, left/right) and size (e.g., small/large) to avoid ambiguity and inadvertent overlap with existing items.

## Example 1:
Original: ["The red ball to the left of the blue toy.", "The man in a white shirt standing next to a woman with an umbrella.", "The smallest dog in the group, near the tree."]
Altered: ["The yellow ball to the left of the blue toy.", "The woman in a blue shirt standing next to a woman with an umbrella.", "The smallest cat in the group, near the tree."]
Reasoning: Changes focus on the main subject (ball color, person's gender, animal type) while ensuring uniqueness and avoiding overlap with real objects.

## Example 2:
Original: ["a man getting ready to cut a cake", "guy in green with a knife in the right hand picture", "woman pointing at ice cream", "a woman in a blue shirt with floral print", "the man standing up and pointing"]
Altered: ["a kangaroo getting ready to cut a cake", "guy in purple with a knife in the right hand picture", "woman pointing at a pizza", "a woman in a blue shirt with stripes", "the man standing up and stretching"]
Reasoning: Each alteration (animal for person, color change, relevant object swap, pattern change, action change) ensures a distinct and fictional transformation while maintaining the sentence structure.

## Example 3:
Original: ["the vase on the right", "a woman wearing a blue shirt", "a woman in a grey blue sweatshirt painting a figure onto a vase", "man on right", "man in red shirt", "a large brown urn being decorated by a woman", "a large urn on a green table and the lady is drawing on it"]
Altered: ["the vase in the back", "a baby wearing a blue shirt", "a woman in a grey blue sweatshirt jogging on the sidewalk", "man on the top", "man in orange shirt", "a large school bus being decorated by a woman", "a large urn on a couch and the lady is drawing on it"]
Reasoning: The changes made here (position, subject identity, action, location) are carefully chosen to create fictional scenarios without referring to other existing objects in the original description.

Your Turn Now! Adhere to the guidelines and answer the question!

Original: )";

std::size_t find_ci(const std::string& haystack, const std::string& needle,
                    std::size_t from = 0) {
  if (needle.empty()) return std::string::npos;
  std::string h = ascii_lower(haystack);
  std::string n = ascii_lower(needle);
  return h.find(n, from);
}

// Scans a balanced bracketed slice starting at `open`, skipping over quoted
// strings and escapes.
std::optional<std::string> balanced_slice(const std::string& text,
                                          std::size_t open, char open_ch,
                                          char close_ch) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == open_ch) {
      ++depth;
    } else if (c == close_ch) {
      --depth;
      if (depth == 0) return text.substr(open, i - open + 1);
    }
  }
  return std::nullopt;
}

}  // namespace

std::string escape_quoted(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\\' || c == '"') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string unescape_quoted(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool escaped = false;
  for (char c : s) {
    if (escaped) {
      out.push_back(c);
      escaped = false;
    } else if (c == '\\') {
      escaped = true;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string see_say_prompt(const std::string& expression) {
  std::string expr(trim(expression));
  if (expr.empty()) throw InvalidInput("referring expression is empty");
  std::string out = kSeeSayHead;
  out += kSeeSayQuestionPrefix;
  out += escape_quoted(expr);
  out += kSeeSayQuestionSuffix;
  return out;
}

std::optional<std::string> extract_see_say_expression(const std::string& text) {
  std::size_t b = text.find(kSeeSayQuestionPrefix);
  if (b == std::string::npos) return std::nullopt;
  b += std::string(kSeeSayQuestionPrefix).size();
  std::size_t e = text.find(" in the image?\"", b);
  if (e == std::string::npos) return std::nullopt;
  return unescape_quoted(text.substr(b, e - b));
}

std::string segment_query(const std::string& expression) {
  return std::string(kSegmentPrefix) + expression + kSegmentSuffix;
}

std::optional<std::string> extract_segment_expression(const std::string& query) {
  const std::string prefix = kSegmentPrefix;
  const std::string suffix = kSegmentSuffix;
  if (query.rfind(prefix, 0) != 0) return std::nullopt;
  if (query.size() < prefix.size() + suffix.size()) return std::nullopt;
  if (query.compare(query.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return std::nullopt;
  }
  return query.substr(prefix.size(),
                      query.size() - prefix.size() - suffix.size());
}

std::string fp_augment_prompt(const std::vector<std::string>& sentences) {
  if (sentences.empty()) throw InvalidInput("sentence list is empty");
  if (sentences.size() > 25) {
    throw InvalidInput("at most 25 sentences per batch, got " +
                       std::to_string(sentences.size()));
  }
  std::string out = kFpAugmentHead;
  out += nlohmann::json(sentences).dump();
  out += "\nAltered:";
  return out;
}

std::optional<std::vector<std::string>> extract_fp_original_list(
    const std::string& prompt_text) {
  // The substituted list is on the last "Original:" line.
  std::size_t pos = prompt_text.rfind("Original: ");
  if (pos == std::string::npos) return std::nullopt;
  std::size_t open = prompt_text.find('[', pos);
  if (open == std::string::npos) return std::nullopt;
  auto slice = balanced_slice(prompt_text, open, '[', ']');
  if (!slice) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(*slice);
    if (!j.is_array()) return std::nullopt;
    return j.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::optional<std::string> find_bracketed_list(const std::string& text,
                                               const std::string& keyword) {
  std::size_t at = find_ci(text, keyword);
  if (at == std::string::npos) return std::nullopt;
  std::size_t open = text.find('[', at + keyword.size());
  if (open == std::string::npos) return std::nullopt;
  return balanced_slice(text, open, '[', ']');
}

std::string judge_prompt(const std::string& candidate,
                         const std::vector<std::string>& references) {
  nlohmann::json payload{{"candidate", candidate}, {"references", references}};
  std::string out =
      "You are scoring a candidate referring expression against a set of "
      "reference expressions that all describe the same object in an image. "
      "Rate the candidate against the single reference it matches best.\n"
      "\n"
      "Score on an integer scale from 0 to 100, where 100 means the candidate "
      "identifies the object as precisely as the best reference and 0 means "
      "it is unrelated to every reference.\n"
      "\n"
      "Respond with strict JSON only: {\"score\": <integer 0-100>, "
      "\"reason\": \"<one short sentence>\"}\n"
      "\n";
  out += payload.dump();
  return out;
}

std::optional<nlohmann::json> extract_judge_payload(const std::string& text) {
  std::size_t pos = text.rfind("{\"candidate\":");
  if (pos == std::string::npos) return std::nullopt;
  auto slice = balanced_slice(text, pos, '{', '}');
  if (!slice) return std::nullopt;
  try {
    return nlohmann::json::parse(*slice);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::string reasoning_fp_prompt(const std::vector<std::string>& distractors) {
  if (distractors.empty()) throw InvalidInput("distractor query list is empty");
  std::string out =
      "You are shown one image together with segmentation queries that were "
      "written for other images. Using the image as context, write plausible "
      "question-and-answer pairs in which each question asks about something "
      "that is not present in this image and each answer explains that the "
      "requested object is absent.\n"
      "\n"
      "Queries from other images: ";
  out += nlohmann::json(distractors).dump();
  out +=
      "\n\nReply with the pairs only, in the form:\n"
      "Pairs: [[\"question\", \"answer\"], ...]";
  return out;
}

}  // namespace fpbench::prompts
