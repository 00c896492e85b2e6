#include "fpbench/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"

namespace fpbench::evalkit {

void SeeCounts::merge(const SeeCounts& other) {
  n_tp += other.n_tp;
  n_fp += other.n_fp;
  tp_hits += other.tp_hits;
  fp_hits += other.fp_hits;
}

SeeMetrics finalize_see(const SeeCounts& counts) {
  SeeMetrics m;
  m.counts = counts;
  const std::int64_t total = counts.n_tp + counts.n_fp;
  m.accuracy = total == 0
                   ? 1.0
                   : static_cast<double>(counts.tp_hits + counts.fp_hits) /
                         static_cast<double>(total);
  m.recall_tp = counts.n_tp == 0 ? 1.0
                                 : static_cast<double>(counts.tp_hits) /
                                       static_cast<double>(counts.n_tp);
  m.recall_fp = counts.n_fp == 0 ? 1.0
                                 : static_cast<double>(counts.fp_hits) /
                                       static_cast<double>(counts.n_fp);
  return m;
}

namespace {

std::unordered_map<std::string, const pipelines::Prediction*> index_predictions(
    const std::vector<pipelines::Prediction>& predictions,
    const std::vector<corpus::RefRecord>& records) {
  std::unordered_map<std::string, const pipelines::Prediction*> by_id;
  by_id.reserve(predictions.size());
  for (const auto& p : predictions) by_id.emplace(p.sent_id, &p);
  std::vector<std::string> missing;
  for (const auto& r : records) {
    if (!by_id.count(r.sent_id)) missing.push_back(r.sent_id);
  }
  if (!missing.empty()) throw IncompleteRun(std::move(missing));
  return by_id;
}

SeeCounts see_counts(const std::vector<pipelines::Prediction>& predictions,
                     const std::vector<corpus::RefRecord>& records) {
  auto by_id = index_predictions(predictions, records);
  SeeCounts counts;
  for (const auto& r : records) {
    const auto& p = *by_id.at(r.sent_id);
    if (r.is_false_premise) {
      ++counts.n_fp;
      if (p.verdict == pipelines::Verdict::absent) ++counts.fp_hits;
    } else {
      ++counts.n_tp;
      if (p.verdict == pipelines::Verdict::present) ++counts.tp_hits;
    }
  }
  return counts;
}

}  // namespace

SeeMetrics see_metrics(const std::vector<pipelines::Prediction>& predictions,
                       const std::vector<corpus::RefRecord>& records) {
  return finalize_see(see_counts(predictions, records));
}

std::vector<std::string> same_referent_references(
    const corpus::RefRecord& record_fp,
    const std::vector<corpus::RefRecord>& all_records) {
  if (!record_fp.is_false_premise) {
    throw InvalidInput("record '" + record_fp.sent_id +
                       "' is not a false premise");
  }
  std::vector<std::string> refs;
  for (const auto& r : all_records) {
    if (!r.is_false_premise && r.image_id == record_fp.image_id &&
        r.ann_id == record_fp.ann_id) {
      refs.push_back(r.sentence);
    }
  }
  if (refs.empty()) {
    throw NoReferences("no positive references for referent of '" +
                       record_fp.sent_id + "'");
  }
  return refs;
}

namespace {

std::optional<int> parse_judge_score(const std::string& text,
                                     std::string* reason) {
  std::size_t pos = text.find('{');
  while (pos != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = pos; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}') {
        if (--depth == 0) {
          try {
            auto j = nlohmann::json::parse(text.substr(pos, i - pos + 1));
            if (j.is_object() && j.contains("score") &&
                j.at("score").is_number()) {
              if (reason) *reason = j.value("reason", std::string{});
              return static_cast<int>(std::llround(j.at("score").get<double>()));
            }
          } catch (const nlohmann::json::exception&) {
          }
          break;
        }
      }
    }
    pos = text.find('{', pos + 1);
  }
  return std::nullopt;
}

}  // namespace

double clair_best_match(const std::string& candidate,
                        const std::vector<std::string>& references,
                        modelio::Endpoint& judge, SayJudgement* judgement) {
  if (references.empty()) throw NoReferences("empty reference set");
  modelio::ChatRequest req;
  req.messages.push_back(
      {"user", prompts::judge_prompt(candidate, references), std::nullopt});
  req.decoding.temperature = 0.0;
  req.decoding.max_tokens = 256;

  SayJudgement local;
  SayJudgement& jd = judgement ? *judgement : local;
  jd.candidate = candidate;
  jd.references = references;

  std::optional<int> score;
  for (int attempt = 0; attempt < 2 && !score; ++attempt) {
    jd.judge_raw = judge.chat(req).text;
    score = parse_judge_score(jd.judge_raw, nullptr);
    if (!score && attempt == 0) jd.flags.push_back("judge-retry");
  }
  if (!score) {
    jd.flags.push_back("judge-parse-failure");
    jd.raw_score = 0;
    jd.score = 0.0;
    return 0.0;
  }
  int s = *score;
  if (s < 0 || s > 100) {
    jd.flags.push_back("clamped");
    s = std::clamp(s, 0, 100);
  }
  jd.raw_score = s;
  jd.score = s / 100.0;
  return jd.score;
}

void SayAccumulator::merge(const SayAccumulator& other) {
  score_sum += other.score_sum;
  n_scored += other.n_scored;
  n_excluded += other.n_excluded;
}

double SayAccumulator::mean() const {
  if (n_scored == 0) return 1.0;
  return static_cast<double>(score_sum) /
         (100.0 * static_cast<double>(n_scored));
}

namespace {

SayAccumulator say_accumulate(const std::vector<pipelines::Prediction>& predictions,
                              const std::vector<corpus::RefRecord>& records,
                              modelio::Endpoint& judge,
                              std::vector<SayJudgement>* judgements) {
  auto by_id = index_predictions(predictions, records);
  SayAccumulator acc;
  for (const auto& r : records) {
    if (!r.is_false_premise) continue;
    std::vector<std::string> refs;
    try {
      refs = same_referent_references(r, records);
    } catch (const NoReferences&) {
      ++acc.n_excluded;
      continue;
    }
    const auto& p = *by_id.at(r.sent_id);
    ++acc.n_scored;
    if (p.verdict == pipelines::Verdict::present) continue;  // scores 0
    std::string candidate;
    if (p.correction) {
      candidate = *p.correction;
    } else if (!trim(p.transcript_stage1).empty()) {
      candidate = p.transcript_stage1;  // judge sees the full denial text
    } else {
      continue;  // nothing to judge, scores 0
    }
    SayJudgement jd;
    jd.sent_id = r.sent_id;
    clair_best_match(candidate, refs, judge, &jd);
    acc.score_sum += jd.raw_score;
    if (judgements) judgements->push_back(std::move(jd));
  }
  return acc;
}

}  // namespace

SayResult say_score(const std::vector<pipelines::Prediction>& predictions,
                    const std::vector<corpus::RefRecord>& records,
                    modelio::Endpoint& judge) {
  SayResult result;
  result.acc = say_accumulate(predictions, records, judge, &result.judgements);
  result.mean = result.acc.mean();
  result.n_scored = result.acc.n_scored;
  result.n_excluded = result.acc.n_excluded;
  return result;
}

namespace {

maskops::CiouAccumulator segment_accumulate(
    const std::vector<pipelines::Prediction>& predictions,
    const std::vector<corpus::RefRecord>& records,
    const corpus::AnnotationStore& store) {
  auto by_id = index_predictions(predictions, records);
  maskops::CiouAccumulator acc;
  for (const auto& r : records) {
    const auto& p = *by_id.at(r.sent_id);
    std::optional<maskops::BitMask> pred;
    if (p.mask) pred = maskops::rle_decode(*p.mask);
    std::optional<maskops::BitMask> gt;
    if (!r.is_false_premise) gt = store.annotation_mask(r.ann_id);
    try {
      acc.add(pred, gt);
    } catch (const ShapeError& e) {
      throw ShapeError("record '" + r.sent_id + "': " + e.what());
    }
  }
  return acc;
}

}  // namespace

SegmentResult segment_score(const std::vector<pipelines::Prediction>& predictions,
                            const std::vector<corpus::RefRecord>& records,
                            const corpus::AnnotationStore& store) {
  SegmentResult result;
  result.acc = segment_accumulate(predictions, records, store);
  result.ciou = result.acc.finalize();
  return result;
}

void EvalAccumulator::merge(const EvalAccumulator& other) {
  see.merge(other.see);
  say.merge(other.say);
  segment.merge(other.segment);
}

EvalAccumulator evaluate_shard(const std::vector<pipelines::Prediction>& predictions,
                               const std::vector<corpus::RefRecord>& records,
                               modelio::Endpoint& judge,
                               const corpus::AnnotationStore& store) {
  EvalAccumulator acc;
  acc.see = see_counts(predictions, records);
  acc.say = say_accumulate(predictions, records, judge, nullptr);
  acc.segment = segment_accumulate(predictions, records, store);
  return acc;
}

std::vector<corpus::RefRecord> build_sweep(
    const std::vector<corpus::RefRecord>& records_split, const SweepSpec& spec) {
  if (spec.fp_ratio < 0.0 || spec.fp_ratio >= 1.0) {
    throw InvalidInput("fp_ratio must lie in [0, 1)");
  }
  std::vector<corpus::RefRecord> positives;
  std::vector<const corpus::RefRecord*> negatives;
  for (const auto& r : records_split) {
    if (r.is_false_premise) {
      negatives.push_back(&r);
    } else {
      positives.push_back(r);
    }
  }
  const double p = static_cast<double>(positives.size());
  const std::int64_t k = static_cast<std::int64_t>(
      std::llround(spec.fp_ratio * p / (1.0 - spec.fp_ratio)));
  if (k > static_cast<std::int64_t>(negatives.size())) {
    throw InsufficientNegatives(k, static_cast<std::int64_t>(negatives.size()));
  }
  std::vector<corpus::RefRecord> out = std::move(positives);
  if (k > 0) {
    // Prefix of one seeded permutation: a uniform without-replacement
    // sample that is nested across increasing ratios at the same seed.
    SplitRng rng(spec.seed);
    auto perm = rng.permutation(negatives.size());
    std::vector<std::size_t> picked(perm.begin(), perm.begin() + k);
    std::sort(picked.begin(), picked.end());
    for (std::size_t idx : picked) out.push_back(*negatives[idx]);
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  return nlohmann::json{
      {"protocol", protocol},
      {"dataset_tag", dataset_tag},
      {"split", split},
      {"fp_ratio", fp_ratio},
      {"seed", seed},
      {"see",
       {{"accuracy", see.accuracy},
        {"recall_fp", see.recall_fp},
        {"recall_tp", see.recall_tp},
        {"n_tp", see.counts.n_tp},
        {"n_fp", see.counts.n_fp},
        {"tp_hits", see.counts.tp_hits},
        {"fp_hits", see.counts.fp_hits}}},
      {"say",
       {{"mean", say_mean},
        {"n_scored", say_n_scored},
        {"n_excluded", say_n_excluded}}},
      {"segment",
       {{"ciou", segment_ciou},
        {"intersection_px", intersection_px},
        {"union_px", union_px}}},
      {"judge", {{"model", judge_model}, {"prompt_version", judge_prompt_version}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.protocol = j.at("protocol").get<std::string>();
    r.dataset_tag = j.at("dataset_tag").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.fp_ratio = j.at("fp_ratio").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& see = j.at("see");
    r.see.accuracy = see.at("accuracy").get<double>();
    r.see.recall_fp = see.at("recall_fp").get<double>();
    r.see.recall_tp = see.at("recall_tp").get<double>();
    r.see.counts.n_tp = see.value("n_tp", std::int64_t{0});
    r.see.counts.n_fp = see.value("n_fp", std::int64_t{0});
    r.see.counts.tp_hits = see.value("tp_hits", std::int64_t{0});
    r.see.counts.fp_hits = see.value("fp_hits", std::int64_t{0});
    r.say_mean = j.at("say").at("mean").get<double>();
    r.say_n_scored = j.at("say").at("n_scored").get<std::int64_t>();
    r.say_n_excluded = j.at("say").at("n_excluded").get<std::int64_t>();
    r.segment_ciou = j.at("segment").at("ciou").get<double>();
    r.intersection_px = j.at("segment").at("intersection_px").get<std::int64_t>();
    r.union_px = j.at("segment").at("union_px").get<std::int64_t>();
    r.judge_model = j.at("judge").at("model").get<std::string>();
    r.judge_prompt_version = j.at("judge").at("prompt_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad eval report: ") + e.what());
  }
  return r;
}

namespace {

std::string shortest_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("bad numeric field '" + s + "'");
  }
  return v;
}

std::string two_dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* kCsvHeader =
    "protocol,dataset_tag,split,fp_ratio,seed,see_accuracy,see_recall_fp,"
    "see_recall_tp,n_tp,n_fp,tp_hits,fp_hits,say_mean,say_n_scored,"
    "say_n_excluded,segment_ciou,intersection_px,union_px,judge_model,"
    "judge_prompt_version";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void emit_report_csv(const std::vector<EvalReport>& reports,
                     const std::string& path) {
  if (reports.empty()) throw InvalidInput("no reports to emit");
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : reports) {
    out << r.protocol << ',' << r.dataset_tag << ',' << r.split << ','
        << shortest_double(r.fp_ratio) << ',' << r.seed << ','
        << shortest_double(r.see.accuracy) << ','
        << shortest_double(r.see.recall_fp) << ','
        << shortest_double(r.see.recall_tp) << ',' << r.see.counts.n_tp << ','
        << r.see.counts.n_fp << ',' << r.see.counts.tp_hits << ','
        << r.see.counts.fp_hits << ',' << shortest_double(r.say_mean) << ','
        << r.say_n_scored << ',' << r.say_n_excluded << ','
        << shortest_double(r.segment_ciou) << ',' << r.intersection_px << ','
        << r.union_px << ',' << r.judge_model << ',' << r.judge_prompt_version
        << '\n';
  }
  write_file(path, out.str());
}

std::vector<EvalReport> parse_report_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw ParseError("unexpected CSV header");
  }
  std::vector<EvalReport> reports;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 20) throw ParseError("expected 20 CSV fields");
    EvalReport r;
    r.protocol = f[0];
    r.dataset_tag = f[1];
    r.split = f[2];
    r.fp_ratio = parse_double(f[3]);
    r.seed = std::stoull(f[4]);
    r.see.accuracy = parse_double(f[5]);
    r.see.recall_fp = parse_double(f[6]);
    r.see.recall_tp = parse_double(f[7]);
    r.see.counts.n_tp = std::stoll(f[8]);
    r.see.counts.n_fp = std::stoll(f[9]);
    r.see.counts.tp_hits = std::stoll(f[10]);
    r.see.counts.fp_hits = std::stoll(f[11]);
    r.say_mean = parse_double(f[12]);
    r.say_n_scored = std::stoll(f[13]);
    r.say_n_excluded = std::stoll(f[14]);
    r.segment_ciou = parse_double(f[15]);
    r.intersection_px = std::stoll(f[16]);
    r.union_px = std::stoll(f[17]);
    r.judge_model = f[18];
    r.judge_prompt_version = f[19];
    reports.push_back(std::move(r));
  }
  return reports;
}

namespace {

std::string render_aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      widths[i] = std::max(widths[i], row[i].size());
    }
  }
  std::ostringstream out;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    out << '|';
    for (std::size_t i = 0; i < widths.size(); ++i) {
      std::string cell = i < rows[ri].size() ? rows[ri][i] : "";
      out << ' ' << cell << std::string(widths[i] - cell.size(), ' ') << " |";
    }
    out << '\n';
    if (ri == 0) {
      out << '|';
      for (std::size_t i = 0; i < widths.size(); ++i) {
        out << ' ' << std::string(widths[i], '-') << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace

std::string render_report_table(const std::vector<EvalReport>& reports,
                                TableShape shape) {
  if (reports.empty()) throw InvalidInput("no reports to render");
  std::vector<std::vector<std::string>> rows;
  if (shape == TableShape::see_say_segment) {
    rows.push_back({"Method", "See", "Say", "Segment"});
    for (const auto& r : reports) {
      rows.push_back({r.protocol + " (" + r.dataset_tag + "/" + r.split + ")",
                      two_dp(r.see.accuracy * 100.0), two_dp(r.say_mean),
                      two_dp(r.segment_ciou * 100.0)});
    }
    return render_aligned(rows);
  }

  // fp_sweep: one row per protocol, one Segment column per ratio; the See
  // recalls come from the report closest to the 50% operating point.
  std::vector<std::string> protocols;
  std::vector<double> ratios;
  for (const auto& r : reports) {
    if (std::find(protocols.begin(), protocols.end(), r.protocol) ==
        protocols.end()) {
      protocols.push_back(r.protocol);
    }
    if (std::find(ratios.begin(), ratios.end(), r.fp_ratio) == ratios.end()) {
      ratios.push_back(r.fp_ratio);
    }
  }
  std::sort(ratios.begin(), ratios.end());
  std::vector<std::string> header{"Method", "Recall (FP)", "Recall (TP)"};
  for (double r : ratios) {
    header.push_back(two_dp(r * 100.0).substr(0, two_dp(r * 100.0).find('.')) +
                     "% FP");
  }
  rows.push_back(header);
  for (const auto& proto : protocols) {
    const EvalReport* anchor = nullptr;
    for (const auto& r : reports) {
      if (r.protocol != proto) continue;
      if (!anchor ||
          std::abs(r.fp_ratio - 0.5) < std::abs(anchor->fp_ratio - 0.5)) {
        anchor = &r;
      }
    }
    std::vector<std::string> row{proto, two_dp(anchor->see.recall_fp * 100.0),
                                 two_dp(anchor->see.recall_tp * 100.0)};
    for (double ratio : ratios) {
      const EvalReport* cell = nullptr;
      for (const auto& r : reports) {
        if (r.protocol == proto && r.fp_ratio == ratio) cell = &r;
      }
      row.push_back(cell ? two_dp(cell->segment_ciou * 100.0) : "-");
    }
    rows.push_back(std::move(row));
  }
  return render_aligned(rows);
}

void emit_report_markdown(const std::vector<EvalReport>& reports,
                          TableShape shape, const std::string& path) {
  write_file(path, render_report_table(reports, shape));
}

}  // namespace fpbench::evalkit
