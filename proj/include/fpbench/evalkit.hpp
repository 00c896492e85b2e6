#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpbench/corpus.hpp"
#include "fpbench/modelio.hpp"
#include "fpbench/pipelines.hpp"

namespace fpbench::evalkit {

struct SeeCounts {
  std::int64_t n_tp = 0;
  std::int64_t n_fp = 0;
  std::int64_t tp_hits = 0;  // true premise classified present
  std::int64_t fp_hits = 0;  // false premise classified absent

  void merge(const SeeCounts& other);
};

struct SeeMetrics {
  double accuracy = 0.0;
  double recall_fp = 0.0;
  double recall_tp = 0.0;
  SeeCounts counts;
};

SeeMetrics finalize_see(const SeeCounts& counts);

/// Binary presence accuracy; the ground-truth label is is_false_premise.
/// Throws IncompleteRun when any record lacks a prediction.
SeeMetrics see_metrics(const std::vector<pipelines::Prediction>& predictions,
                       const std::vector<corpus::RefRecord>& records);

/// All positive sentences sharing (image_id, ann_id) with the false-premise
/// record. Throws NoReferences when none exist; such records are excluded
/// from the Say mean and counted in the report.
std::vector<std::string> same_referent_references(
    const corpus::RefRecord& record_fp,
    const std::vector<corpus::RefRecord>& all_records);

struct SayJudgement {
  std::string sent_id;
  std::string candidate;
  std::vector<std::string> references;
  int raw_score = 0;  // integer 0..100 after clamping
  double score = 0.0;
  std::string judge_raw;
  std::vector<std::string> flags;
};

/// One judge call scoring the candidate against its best-matching
/// reference: strict JSON {"score": <0-100>, "reason": ...} expected,
/// retried once on unparseable output, then scored 0 with a flag.
/// Out-of-range scores are clamped and flagged.
double clair_best_match(const std::string& candidate,
                        const std::vector<std::string>& references,
                        modelio::Endpoint& judge,
                        SayJudgement* judgement = nullptr);

struct SayAccumulator {
  std::int64_t score_sum = 0;  // integer sum of 0..100 judge scores
  std::int64_t n_scored = 0;   // all false-premise queries with references
  std::int64_t n_excluded = 0; // NoReferences records

  void merge(const SayAccumulator& other);
  double mean() const;  // 1.0 on an empty (vacuously correct) denominator
};

struct SayResult {
  double mean = 0.0;
  std::int64_t n_scored = 0;
  std::int64_t n_excluded = 0;
  SayAccumulator acc;
  std::vector<SayJudgement> judgements;
};

/// Mean over all false-premise queries: a query answered "present" scores
/// 0; an "absent" answer is judged on its correction, falling back to the
/// stage-1 transcript when extraction produced none.
SayResult say_score(const std::vector<pipelines::Prediction>& predictions,
                    const std::vector<corpus::RefRecord>& records,
                    modelio::Endpoint& judge);

struct SegmentResult {
  double ciou = 0.0;
  maskops::CiouAccumulator acc;
};

/// Cumulative IoU: true-premise ground truth comes from the annotation
/// store, false premises have none, predictions decode from their RLE.
SegmentResult segment_score(const std::vector<pipelines::Prediction>& predictions,
                            const std::vector<corpus::RefRecord>& records,
                            const corpus::AnnotationStore& store);

/// Shard-level evaluation state; merging shards is exact because all three
/// metrics accumulate integers.
struct EvalAccumulator {
  SeeCounts see;
  SayAccumulator say;
  maskops::CiouAccumulator segment;

  void merge(const EvalAccumulator& other);
};

EvalAccumulator evaluate_shard(const std::vector<pipelines::Prediction>& predictions,
                               const std::vector<corpus::RefRecord>& records,
                               modelio::Endpoint& judge,
                               const corpus::AnnotationStore& store);

struct SweepSpec {
  double fp_ratio = 0.0;  // in [0, 1)
  std::uint64_t seed = 0;
};

/// Keeps every positive and samples k = round(r*|P|/(1-r)) negatives
/// without replacement. Sampling takes a seeded permutation prefix, so for
/// a fixed seed the sampled negatives are nested across increasing ratios
/// and r=0 is exactly the positive-only benchmark.
std::vector<corpus::RefRecord> build_sweep(
    const std::vector<corpus::RefRecord>& records_split, const SweepSpec& spec);

struct EvalReport {
  std::string protocol;
  std::string dataset_tag;
  std::string split;
  double fp_ratio = 0.0;
  std::uint64_t seed = 0;
  SeeMetrics see;
  double say_mean = 0.0;
  std::int64_t say_n_scored = 0;
  std::int64_t say_n_excluded = 0;
  double segment_ciou = 0.0;
  std::int64_t intersection_px = 0;
  std::int64_t union_px = 0;
  std::string judge_model;
  std::string judge_prompt_version;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

enum class TableShape { see_say_segment, fp_sweep };

/// CSV stores full precision (round-trips exactly); the markdown table
/// renders at two decimals with See/Segment as percentages.
void emit_report_csv(const std::vector<EvalReport>& reports,
                     const std::string& path);
std::vector<EvalReport> parse_report_csv(const std::string& path);
std::string render_report_table(const std::vector<EvalReport>& reports,
                                TableShape shape);
void emit_report_markdown(const std::vector<EvalReport>& reports,
                          TableShape shape, const std::string& path);

}  // namespace fpbench::evalkit
