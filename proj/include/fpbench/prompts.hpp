#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fpbench::prompts {

// Versioned template assets. Any change to a template text must bump its
// version; judge and generation provenance records carry these strings.
inline constexpr const char* kSeeSayPromptVersion = "see-say-v1";
inline constexpr const char* kFpAugmentPromptVersion = "fp-augment-v1";
inline constexpr const char* kJudgePromptVersion = "clair-best-match-v1";
inline constexpr const char* kReasoningFpPromptVersion = "reasoning-fp-v1";
inline constexpr const char* kManifestConvVersion = "manifest-conv-v1";

/// Escapes a value for embedding inside a double-quoted slot of a prompt.
std::string escape_quoted(const std::string& s);
std::string unescape_quoted(const std::string& s);

/// Presence-verification prompt with the expression substituted into the
/// question slot. The reply is routed by the "No, there is no" prefix rule.
std::string see_say_prompt(const std::string& expression);

/// Inverse of the see_say substitution; used by deterministic mock
/// endpoints to recover the queried expression.
std::optional<std::string> extract_see_say_expression(const std::string& text);

/// Stage-2 referring segmentation query.
std::string segment_query(const std::string& expression);
std::optional<std::string> extract_segment_expression(const std::string& query);

/// Augmentation prompt: role, guidelines and three in-context examples,
/// with the sentence list substituted as a JSON-style quoted list on the
/// final "Original:" line. The completion is expected to start after the
/// trailing "Altered:".
std::string fp_augment_prompt(const std::vector<std::string>& sentences);

/// Recovers the substituted "Original:" list; used by mock augmenters.
std::optional<std::vector<std::string>> extract_fp_original_list(
    const std::string& prompt_text);

/// Finds the first bracketed quoted-string list after a case-insensitive
/// keyword ("Altered:", "Pairs:", ...). Returns the raw JSON slice.
std::optional<std::string> find_bracketed_list(const std::string& text,
                                               const std::string& keyword);

/// Judge prompt for best-match correction scoring. Ends with a strict JSON
/// payload line {"candidate": ..., "references": [...]}.
std::string judge_prompt(const std::string& candidate,
                         const std::vector<std::string>& references);
std::optional<nlohmann::json> extract_judge_payload(const std::string& text);

/// Vision-LLM prompt for false-premise question/answer generation from
/// distractor queries belonging to other images.
std::string reasoning_fp_prompt(const std::vector<std::string>& distractors);

}  // namespace fpbench::prompts
