#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fpbench/corpus.hpp"
#include "fpbench/modelio.hpp"

namespace fpbench::pipelines {

enum class Verdict { present, absent };
enum class Protocol { cascade, unified, baseline };

std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);
std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct Prediction {
  std::string sent_id;
  Verdict verdict = Verdict::present;
  std::optional<std::string> correction;
  std::optional<maskops::RleMask> mask;
  std::string transcript_stage1;
  std::optional<std::string> transcript_stage2;
  Protocol protocol = Protocol::cascade;
  std::vector<std::string> flags;

  nlohmann::json to_json() const;
  static Prediction from_json(const nlohmann::json& j);
};

modelio::ChatRequest build_see_say_prompt(const std::string& expression,
                                          const std::string& image_ref);

/// Routing rule: absent iff the text, after stripping leading whitespace
/// and case-folding, begins with "no, there is no". Softer denials count
/// as present. When absent, the correction is the text after the first
/// sentence terminator with a leading "did you mean" and a trailing "?"
/// stripped; an empty remainder yields no correction. Total function.
std::pair<Verdict, std::optional<std::string>> classify_presence(
    const std::string& response_text);

/// Stage 1 decides presence and phrasing; stage 2 is called only when the
/// object was confirmed, so a denied query never produces a mask.
Prediction run_cascade(const corpus::RefRecord& record,
                       const std::string& image_ref,
                       modelio::Endpoint& chat_endpoint,
                       modelio::Endpoint& seg_endpoint);

/// Single call; verdict and correction come from the transcript. If the
/// transcript denies but a mask arrived anyway, the mask is kept for
/// scoring and the prediction is flagged "contradiction".
Prediction run_unified(const corpus::RefRecord& record,
                       const std::string& image_ref,
                       modelio::Endpoint& unified_endpoint);

/// Segments unconditionally; verdict is always present.
Prediction run_baseline(const corpus::RefRecord& record,
                        const std::string& image_ref,
                        modelio::Endpoint& seg_endpoint);

using ImageRefFn = std::function<std::string(std::int64_t image_id)>;

struct RunOptions {
  int concurrency = 4;
};

/// Runs one protocol over a record batch with bounded concurrency.
/// Predictions come back in input order regardless of completion order.
/// chat/seg hold the stage-1 and stage-2 endpoints for cascade, the seg
/// endpoint for baseline, and the single endpoint (as seg) for unified.
std::vector<Prediction> run_protocol(Protocol protocol,
                                     const std::vector<corpus::RefRecord>& records,
                                     const ImageRefFn& image_ref,
                                     modelio::Endpoint* chat_endpoint,
                                     modelio::Endpoint* seg_endpoint,
                                     const RunOptions& options = {});

std::vector<Prediction> load_predictions(const std::string& path);
void write_predictions(const std::string& path,
                       const std::vector<Prediction>& predictions);

}  // namespace fpbench::pipelines
