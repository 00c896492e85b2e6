#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fpbench/corpus.hpp"
#include "fpbench/modelio.hpp"

namespace fpbench::augment {

struct AugmentationBatch {
  std::int64_t image_id = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // (sent_id, sentence)
  std::string raw_response;
  std::optional<std::vector<std::string>> altered;  // positional pairing
};

/// One LLM call per image, all of its positive sentences in one list.
std::string build_fp_prompt(const std::vector<std::string>& sentences);

/// Extracts exactly n_expected altered sentences from the first bracketed
/// quoted-string list after "Altered:". ParseError / LengthMismatch mark
/// the batch for regeneration.
std::vector<std::string> parse_fp_response(const std::string& raw,
                                           std::size_t n_expected);

struct GenerationPolicy {
  int max_retries = 2;     // content retries after unparseable output
  int fp_per_positive = 1;
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct GenerationReport {
  std::int64_t batches = 0;
  std::int64_t retries = 0;
  std::int64_t dropped_batches = 0;
  std::vector<std::int64_t> failed_image_ids;  // transport failures
};

/// Turns positive records into linked false-premise records via the
/// augmentation prompt. Output order is deterministic: images in first
/// appearance order, sentences in input order, ids derived as
/// "<source_sent_id>#fp<k>". Batches that stay unparseable after the retry
/// budget are dropped; transport failures are collected and raised as one
/// UpstreamError after the sweep completes.
std::vector<corpus::RefRecord> generate_fp_records(
    const std::vector<corpus::RefRecord>& positive_records,
    modelio::Endpoint& llm, std::uint64_t seed, const GenerationPolicy& policy,
    GenerationReport* report = nullptr);

struct DropEntry {
  std::int64_t image_id = 0;
  std::string rule;  // identical-to-source | duplicate | collides-positive
  std::string sentence;
};

struct CleanReport {
  std::int64_t dropped_identical = 0;
  std::int64_t dropped_duplicate = 0;
  std::int64_t dropped_collides_positive = 0;
  std::int64_t edit_distance_warnings = 0;
  std::vector<DropEntry> entries;
};

/// Drops candidates that (a) equal their source after case/whitespace
/// normalization, (b) duplicate an earlier surviving candidate on the same
/// image, or (c) exactly match a positive sentence on the same image.
/// A word-level edit distance > 2 from the source only warns.
std::vector<corpus::RefRecord> clean_dataset(
    const std::vector<corpus::RefRecord>& candidates,
    const std::vector<corpus::RefRecord>& positive_records,
    CleanReport* report = nullptr);

struct FpTemplate {
  std::string pattern;         // exactly one {category} slot
  std::string answer_pattern;  // rejection sentence, may use {category}

  void validate() const;
  std::string instantiate(const std::string& category) const;
  std::string instantiate_answer(const std::string& category) const;
};

/// Template-based false premises about categories absent from the image.
/// Samples k categories without replacement from all minus present, then
/// instantiates every template per sampled category. Records are tagged
/// semantic-fp with no correction (rejection-only data).
std::vector<corpus::RefRecord> generate_semantic_fp(
    std::int64_t image_id, corpus::Split split,
    const std::set<std::string>& image_categories,
    const std::set<std::string>& all_categories,
    const std::vector<FpTemplate>& templates, std::uint64_t seed, int k);

struct QaRecord {
  std::string qa_id;
  std::string image_ref;
  std::string question;
  std::string answer;
  corpus::DatasetTag tag = corpus::DatasetTag::reasoning_fp;

  nlohmann::json to_json() const;
  static QaRecord from_json(const nlohmann::json& j);

  bool operator==(const QaRecord&) const = default;
};

std::vector<QaRecord> load_qa_records(const std::string& path);
void write_qa_records(const std::string& path,
                      const std::vector<QaRecord>& records);

struct ReasoningPolicy {
  int max_retries = 2;
  int max_distractors = 3;
  double temperature = 0.0;
  int max_tokens = 2048;
};

/// One vision-LLM call per image: distractor queries from other images go
/// in, false-premise question/answer pairs come out (parsed from a
/// "Pairs:" list mirroring the Altered: contract).
std::vector<QaRecord> generate_reasoning_fp(
    modelio::Endpoint& vision_llm, const std::string& image_ref,
    const std::vector<std::string>& distractor_queries, std::uint64_t seed,
    const ReasoningPolicy& policy = {});

}  // namespace fpbench::augment
