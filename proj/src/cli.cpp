#include "fpbench/cli.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpbench/augment.hpp"
#include "fpbench/common.hpp"
#include "fpbench/corpus.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/evalkit.hpp"
#include "fpbench/modelio.hpp"
#include "fpbench/pipelines.hpp"
#include "fpbench/prompts.hpp"
#include "fpbench/trainprep.hpp"

namespace fpbench::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kSummarySchemaVersion = "1";

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvalidInput:
      return 1;
    case ErrorKind::Upstream:
    case ErrorKind::Protocol:
      return 3;
    default:
      return 2;
  }
}

std::string file_digest(const std::string& path) {
  return fnv1a64_hex(read_file(path));
}

/// The digest covers the results section only; paths and flags live in
/// "config" and never influence it.
void write_summary(const std::string& path, const std::string& command,
                   const nlohmann::json& config, const nlohmann::json& results) {
  nlohmann::json summary{{"schema_version", kSummarySchemaVersion},
                         {"command", command},
                         {"config", config},
                         {"results", results}};
  summary["digest"] = fnv1a64_hex(results.dump());
  write_file(path, summary.dump(2) + "\n");
}

std::string default_summary_path(const std::string& out_path) {
  return out_path + ".summary.json";
}

struct EndpointSet {
  std::vector<modelio::EndpointConfig> configs;
  std::shared_ptr<modelio::RunLedger> ledger;
  const modelio::MockGroundTruth* ground_truth = nullptr;
  std::map<std::string, std::unique_ptr<modelio::Endpoint>> built;

  modelio::Endpoint& get(const std::string& name) {
    auto it = built.find(name);
    if (it != built.end()) return *it->second;
    for (const auto& c : configs) {
      if (c.name == name) {
        auto ep = modelio::make_endpoint(c, ledger, ground_truth);
        return *built.emplace(name, std::move(ep)).first->second;
      }
    }
    throw InvalidInput("endpoint '" + name + "' not found in endpoint config");
  }

  const modelio::EndpointConfig& config_for(const std::string& name) const {
    for (const auto& c : configs) {
      if (c.name == name) return c;
    }
    throw InvalidInput("endpoint '" + name + "' not found in endpoint config");
  }
};

// --config FILE provides defaults; explicit flags always win.
struct ConfigOverlay {
  nlohmann::json doc = nlohmann::json::object();

  void load(const std::string& path) {
    try {
      doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed config file: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("config file must be a JSON object");
  }

  template <typename T>
  void apply(const CLI::Option* opt, const std::string& key, T& target) const {
    if (opt && opt->count() > 0) return;
    if (!doc.contains(key)) return;
    try {
      target = doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ParseError("config key '" + key + "' has the wrong type");
    }
  }
};

pipelines::ImageRefFn image_ref_fn(const corpus::AnnotationStore* store) {
  if (store) {
    return [store](std::int64_t id) { return store->image_ref(id); };
  }
  return [](std::int64_t id) { return "image:" + std::to_string(id); };
}

nlohmann::json stats_to_json(const corpus::SplitStats& s) {
  return nlohmann::json{{"images", s.images},
                        {"objects", s.objects},
                        {"sentences", s.sentences},
                        {"positive_sentences", s.positive_sentences},
                        {"negative_sentences", s.negative_sentences}};
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string records_path;
  std::string split;
  std::string tag;
  std::string summary_path;
};

int run_stats(const StatsArgs& a) {
  std::optional<corpus::DatasetTag> tag;
  if (!a.tag.empty()) tag = corpus::tag_from_string(a.tag);
  auto records = corpus::load_records(a.records_path, tag);
  auto stats = corpus::compute_stats(records, a.split);
  std::cout << "split=" << a.split << " images=" << stats.images
            << " objects=" << stats.objects << " sentences=" << stats.sentences
            << " positive=" << stats.positive_sentences
            << " negative=" << stats.negative_sentences << "\n";
  const std::string summary =
      a.summary_path.empty() ? default_summary_path(a.records_path)
                             : a.summary_path;
  write_summary(summary, "stats",
                {{"records", a.records_path}, {"split", a.split}, {"tag", a.tag}},
                {{"split", a.split}, {"stats", stats_to_json(stats)}});
  return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string mode = "fp";
  std::string records_path;
  std::string annotations_path;
  std::string endpoints_path;
  std::string endpoint_name;
  std::string templates_path;
  std::string out_path;
  std::string combined_out;
  std::string ledger_path;
  std::string summary_path;
  std::string split = "train";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int max_retries = 2;
  int fp_per_positive = 1;
  int k = 1;
  int distractors = 3;
};

int run_generate(const GenerateArgs& a) {
  if (!a.seed_set) throw InvalidInput("generate requires --seed");
  std::optional<corpus::AnnotationStore> store;
  if (!a.annotations_path.empty()) {
    store = corpus::AnnotationStore::load(a.annotations_path);
  }

  nlohmann::json results;
  if (a.mode == "fp" || a.mode == "reasoning") {
    auto positives = corpus::load_records(a.records_path);
    for (const auto& r : positives) {
      if (r.is_false_premise) {
        throw IntegrityError("input records must be positives only ('" +
                             r.sent_id + "' is a false premise)");
      }
    }
    if (a.endpoints_path.empty() || a.endpoint_name.empty()) {
      throw InvalidInput("generate needs --endpoints and --endpoint");
    }
    EndpointSet endpoints;
    endpoints.configs = modelio::load_endpoint_configs(a.endpoints_path);
    if (!a.ledger_path.empty()) {
      endpoints.ledger = std::make_shared<modelio::RunLedger>(a.ledger_path);
    }
    auto& llm = endpoints.get(a.endpoint_name);

    if (a.mode == "fp") {
      augment::GenerationPolicy policy;
      policy.max_retries = a.max_retries;
      policy.fp_per_positive = a.fp_per_positive;
      augment::GenerationReport report;
      auto fp_records = augment::generate_fp_records(
          positives, llm, derive_seed(a.seed, "augment"), policy, &report);
      corpus::write_records(a.out_path, fp_records);
      if (!a.combined_out.empty()) {
        auto combined = positives;
        combined.insert(combined.end(), fp_records.begin(), fp_records.end());
        corpus::validate_records(combined);
        corpus::write_records(a.combined_out, combined);
      }
      results = {{"mode", "fp"},
                 {"n_positives", positives.size()},
                 {"n_generated", fp_records.size()},
                 {"batches", report.batches},
                 {"retries", report.retries},
                 {"dropped_batches", report.dropped_batches},
                 {"output_digest", file_digest(a.out_path)}};
    } else {
      // reasoning: distractor queries come from other images
      std::map<std::int64_t, std::vector<std::string>> by_image;
      std::vector<std::int64_t> image_order;
      for (const auto& r : positives) {
        if (!by_image.count(r.image_id)) image_order.push_back(r.image_id);
        by_image[r.image_id].push_back(r.sentence);
      }
      auto ref_fn = image_ref_fn(store ? &*store : nullptr);
      std::vector<augment::QaRecord> qa;
      for (std::int64_t image_id : image_order) {
        std::vector<std::string> distractors;
        for (const auto& [other_id, sentences] : by_image) {
          if (other_id == image_id) continue;
          distractors.insert(distractors.end(), sentences.begin(),
                             sentences.end());
        }
        if (distractors.empty()) continue;
        augment::ReasoningPolicy policy;
        policy.max_retries = a.max_retries;
        policy.max_distractors = a.distractors;
        auto records = augment::generate_reasoning_fp(
            llm, ref_fn(image_id), distractors,
            derive_seed(a.seed, "reasoning:" + std::to_string(image_id)),
            policy);
        qa.insert(qa.end(), records.begin(), records.end());
      }
      augment::write_qa_records(a.out_path, qa);
      results = {{"mode", "reasoning"},
                 {"n_images", image_order.size()},
                 {"n_generated", qa.size()},
                 {"output_digest", file_digest(a.out_path)}};
    }
  } else if (a.mode == "semantic") {
    if (!store) throw InvalidInput("--mode semantic requires --annotations");
    std::vector<augment::FpTemplate> templates;
    if (!a.templates_path.empty()) {
      auto doc = nlohmann::json::parse(read_file(a.templates_path));
      for (const auto& t : doc) {
        templates.push_back({t.at("pattern").get<std::string>(),
                             t.value("answer_pattern", std::string{})});
      }
    } else {
      templates.push_back({"Can you segment the {category} in this image?",
                           "There is no {category} in this image."});
    }
    std::set<std::string> all_categories;
    for (const auto& [id, cat] : store->categories()) {
      all_categories.insert(cat.name);
    }
    std::map<std::int64_t, std::set<std::string>> present;
    for (const auto& [id, ann] : store->annotations()) {
      present[ann.image_id].insert(store->category(ann.category_id).name);
    }
    const corpus::Split split = corpus::split_from_string(a.split);
    std::vector<corpus::RefRecord> out;
    for (const auto& [image_id, info] : store->images()) {
      auto records = augment::generate_semantic_fp(
          image_id, split, present[image_id], all_categories, templates,
          derive_seed(a.seed, "semantic:" + std::to_string(image_id)), a.k);
      out.insert(out.end(), records.begin(), records.end());
    }
    corpus::write_records(a.out_path, out);
    results = {{"mode", "semantic"},
               {"n_images", store->images().size()},
               {"n_generated", out.size()},
               {"output_digest", file_digest(a.out_path)}};
  } else {
    throw InvalidInput("unknown --mode '" + a.mode + "'");
  }

  const std::string summary = a.summary_path.empty()
                                  ? default_summary_path(a.out_path)
                                  : a.summary_path;
  write_summary(summary, "generate",
                {{"mode", a.mode},
                 {"records", a.records_path},
                 {"endpoint", a.endpoint_name},
                 {"seed", a.seed}},
                results);
  return 0;
}

// ---------------------------------------------------------------------------
// clean

struct CleanArgs {
  std::string candidates_path;
  std::string positives_path;
  std::string out_path;
  std::string combined_out;
  std::string drop_report;
  std::string summary_path;
  std::string ratio_band;
};

int run_clean(const CleanArgs& a) {
  // Candidate files are fragments: their sources live in the positives file.
  auto candidates =
      corpus::load_records(a.candidates_path, std::nullopt, false);
  auto positives = corpus::load_records(a.positives_path);
  augment::CleanReport report;
  auto kept = augment::clean_dataset(candidates, positives, &report);
  corpus::write_records(a.out_path, kept);
  if (!a.combined_out.empty()) {
    auto combined = positives;
    combined.insert(combined.end(), kept.begin(), kept.end());
    corpus::validate_records(combined);
    corpus::write_records(a.combined_out, combined);
  }
  if (!a.drop_report.empty()) {
    std::string lines;
    for (const auto& d : report.entries) {
      lines += nlohmann::json{{"image_id", d.image_id},
                              {"rule", d.rule},
                              {"sentence", d.sentence}}
                   .dump();
      lines += '\n';
    }
    write_file(a.drop_report, lines);
  }
  const double ratio =
      positives.empty() ? 0.0
                        : static_cast<double>(kept.size()) /
                              static_cast<double>(positives.size());
  if (!a.ratio_band.empty()) {
    double lo = 0.0, hi = 1.0;
    if (std::sscanf(a.ratio_band.c_str(), "%lf,%lf", &lo, &hi) != 2) {
      throw InvalidInput("--ratio-band must look like 0.90,1.00");
    }
    if (ratio < lo || ratio > hi) {
      throw IntegrityError("negative:positive ratio " + std::to_string(ratio) +
                           " outside configured band [" + std::to_string(lo) +
                           ", " + std::to_string(hi) + "]");
    }
  }
  nlohmann::json results{{"n_candidates", candidates.size()},
                         {"n_kept", kept.size()},
                         {"dropped_identical", report.dropped_identical},
                         {"dropped_duplicate", report.dropped_duplicate},
                         {"dropped_collides_positive",
                          report.dropped_collides_positive},
                         {"edit_distance_warnings", report.edit_distance_warnings},
                         {"negative_positive_ratio", ratio},
                         {"output_digest", file_digest(a.out_path)}};
  std::cout << "kept " << kept.size() << "/" << candidates.size()
            << " candidates (ratio " << ratio << ")\n";
  const std::string summary = a.summary_path.empty()
                                  ? default_summary_path(a.out_path)
                                  : a.summary_path;
  write_summary(summary, "clean",
                {{"candidates", a.candidates_path},
                 {"positives", a.positives_path}},
                results);
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string protocol = "cascade";
  std::string records_path;
  std::string annotations_path;
  std::string endpoints_path;
  std::string chat_endpoint;
  std::string seg_endpoint;
  std::string unified_endpoint;
  std::string out_path;
  std::string ledger_path;
  std::string summary_path;
  int concurrency = 4;
  bool dry_run = false;
};

int run_infer(const InferArgs& a) {
  auto records = corpus::load_records(a.records_path);
  std::optional<corpus::AnnotationStore> store;
  if (!a.annotations_path.empty()) {
    store = corpus::AnnotationStore::load(a.annotations_path);
  }
  const auto protocol = pipelines::protocol_from_string(a.protocol);
  auto ref_fn = image_ref_fn(store ? &*store : nullptr);

  if (a.dry_run) {
    // Exact prompts, zero endpoint construction, empty ledger.
    if (!a.ledger_path.empty()) write_file(a.ledger_path, "");
    std::string all;
    for (const auto& r : records) {
      std::ostringstream block;
      block << "# record " << r.sent_id << " (" << ref_fn(r.image_id) << ")\n";
      switch (protocol) {
        case pipelines::Protocol::cascade:
          block << "[stage1]\n" << prompts::see_say_prompt(r.sentence) << "\n";
          block << "[stage2 if present] " << prompts::segment_query(r.sentence)
                << "\n";
          break;
        case pipelines::Protocol::unified:
          block << "[unified] " << r.sentence << "\n";
          break;
        case pipelines::Protocol::baseline:
          block << "[stage2] " << prompts::segment_query(r.sentence) << "\n";
          break;
      }
      std::cout << block.str();
      all += block.str();
    }
    const std::string summary = a.summary_path.empty()
                                    ? default_summary_path(a.out_path)
                                    : a.summary_path;
    write_summary(summary, "infer",
                  {{"protocol", a.protocol}, {"dry_run", true}},
                  {{"n_records", records.size()},
                   {"prompts_digest", fnv1a64_hex(all)},
                   {"ledger_entries", 0}});
    return 0;
  }

  if (a.endpoints_path.empty()) throw InvalidInput("infer needs --endpoints");
  EndpointSet endpoints;
  endpoints.configs = modelio::load_endpoint_configs(a.endpoints_path);
  if (!a.ledger_path.empty()) {
    endpoints.ledger = std::make_shared<modelio::RunLedger>(a.ledger_path);
  }
  std::optional<modelio::MockGroundTruth> gt;
  if (store) {
    gt = modelio::MockGroundTruth::from_records(records, *store);
    endpoints.ground_truth = &*gt;
  }

  modelio::Endpoint* chat_ep = nullptr;
  modelio::Endpoint* seg_ep = nullptr;
  switch (protocol) {
    case pipelines::Protocol::cascade:
      if (a.chat_endpoint.empty() || a.seg_endpoint.empty()) {
        throw InvalidInput("cascade needs --chat-endpoint and --seg-endpoint");
      }
      chat_ep = &endpoints.get(a.chat_endpoint);
      seg_ep = &endpoints.get(a.seg_endpoint);
      break;
    case pipelines::Protocol::unified:
      if (a.unified_endpoint.empty()) {
        throw InvalidInput("unified needs --unified-endpoint");
      }
      seg_ep = &endpoints.get(a.unified_endpoint);
      break;
    case pipelines::Protocol::baseline:
      if (a.seg_endpoint.empty()) {
        throw InvalidInput("baseline needs --seg-endpoint");
      }
      seg_ep = &endpoints.get(a.seg_endpoint);
      break;
  }

  pipelines::RunOptions options;
  options.concurrency = a.concurrency;
  auto predictions =
      pipelines::run_protocol(protocol, records, ref_fn, chat_ep, seg_ep, options);
  pipelines::write_predictions(a.out_path, predictions);

  std::int64_t n_present = 0, n_masks = 0;
  for (const auto& p : predictions) {
    if (p.verdict == pipelines::Verdict::present) ++n_present;
    if (p.mask) ++n_masks;
  }
  nlohmann::json results{
      {"protocol", a.protocol},
      {"n_records", records.size()},
      {"n_present", n_present},
      {"n_absent", static_cast<std::int64_t>(records.size()) - n_present},
      {"n_masks", n_masks},
      {"ledger_entries", endpoints.ledger ? endpoints.ledger->entries() : 0},
      {"output_digest", file_digest(a.out_path)}};
  const std::string summary = a.summary_path.empty()
                                  ? default_summary_path(a.out_path)
                                  : a.summary_path;
  write_summary(summary, "infer",
                {{"protocol", a.protocol},
                 {"records", a.records_path},
                 {"concurrency", a.concurrency}},
                results);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string preds_path;
  std::string records_path;
  std::string annotations_path;
  std::string endpoints_path;
  std::string judge_endpoint;
  std::string out_path;
  std::string csv_path;
  std::string table_path;
  std::string table_shape = "see-say-segment";
  std::string ledger_path;
  std::string summary_path;
  std::string split;
  double fp_ratio = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

evalkit::EvalReport eval_once(const std::vector<pipelines::Prediction>& preds,
                              const std::vector<corpus::RefRecord>& records,
                              const corpus::AnnotationStore& store,
                              modelio::Endpoint& judge,
                              const modelio::EndpointConfig& judge_cfg,
                              double fp_ratio, std::uint64_t seed) {
  evalkit::EvalReport report;
  report.see = evalkit::see_metrics(preds, records);
  auto say = evalkit::say_score(preds, records, judge);
  report.say_mean = say.mean;
  report.say_n_scored = say.n_scored;
  report.say_n_excluded = say.n_excluded;
  auto seg = evalkit::segment_score(preds, records, store);
  report.segment_ciou = seg.ciou;
  report.intersection_px = seg.acc.intersection_px;
  report.union_px = seg.acc.union_px;
  report.fp_ratio = fp_ratio;
  report.seed = seed;
  report.judge_model = judge_cfg.model.empty() ? judge_cfg.name : judge_cfg.model;
  report.judge_prompt_version = prompts::kJudgePromptVersion;
  if (!records.empty()) {
    report.dataset_tag = corpus::to_string(records.front().dataset_tag);
    report.split = corpus::to_string(records.front().split);
  }
  return report;
}

int run_eval(const EvalArgs& a) {
  auto predictions = pipelines::load_predictions(a.preds_path);
  auto records = corpus::load_records(a.records_path);
  if (!a.split.empty()) {
    const auto split = corpus::split_from_string(a.split);
    std::erase_if(records, [&](const auto& r) { return r.split != split; });
  }
  if (a.fp_ratio >= 0.0) {
    if (!a.seed_set) throw InvalidInput("--fp-ratio requires --seed");
    records = evalkit::build_sweep(records, {a.fp_ratio, a.seed});
  }
  auto store = corpus::AnnotationStore::load(a.annotations_path);

  if (a.endpoints_path.empty() || a.judge_endpoint.empty()) {
    throw InvalidInput("eval needs --endpoints and --judge-endpoint");
  }
  EndpointSet endpoints;
  endpoints.configs = modelio::load_endpoint_configs(a.endpoints_path);
  if (!a.ledger_path.empty()) {
    endpoints.ledger = std::make_shared<modelio::RunLedger>(a.ledger_path);
  }
  auto& judge = endpoints.get(a.judge_endpoint);

  auto report = eval_once(predictions, records, store, judge,
                          endpoints.config_for(a.judge_endpoint),
                          a.fp_ratio >= 0.0 ? a.fp_ratio : 0.0, a.seed);
  if (!predictions.empty()) {
    report.protocol = pipelines::to_string(predictions.front().protocol);
  }
  write_file(a.out_path, report.to_json().dump(2) + "\n");
  if (!a.csv_path.empty()) evalkit::emit_report_csv({report}, a.csv_path);
  if (!a.table_path.empty()) {
    const auto shape = a.table_shape == "fp-sweep"
                           ? evalkit::TableShape::fp_sweep
                           : evalkit::TableShape::see_say_segment;
    evalkit::emit_report_markdown({report}, shape, a.table_path);
  }
  std::cout << evalkit::render_report_table(
      {report}, evalkit::TableShape::see_say_segment);

  const std::string summary = a.summary_path.empty()
                                  ? default_summary_path(a.out_path)
                                  : a.summary_path;
  write_summary(summary, "eval",
                {{"preds", a.preds_path},
                 {"records", a.records_path},
                 {"judge_endpoint", a.judge_endpoint},
                 {"fp_ratio", a.fp_ratio},
                 {"seed", a.seed}},
                {{"report", report.to_json()},
                 {"output_digest", file_digest(a.out_path)}});
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string records_path;
  std::string annotations_path;
  std::string endpoints_path;
  std::string protocol = "baseline";
  std::string chat_endpoint;
  std::string seg_endpoint;
  std::string unified_endpoint;
  std::string judge_endpoint;
  std::string ratios = "0,0.25,0.5,0.75";
  std::string out_dir;
  std::string split;
  std::string summary_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int concurrency = 4;
};

int run_sweep(const SweepArgs& a) {
  if (!a.seed_set) throw InvalidInput("sweep requires --seed");
  auto records = corpus::load_records(a.records_path);
  if (!a.split.empty()) {
    const auto split = corpus::split_from_string(a.split);
    std::erase_if(records, [&](const auto& r) { return r.split != split; });
  }
  auto store = corpus::AnnotationStore::load(a.annotations_path);

  std::vector<double> ratios;
  {
    std::stringstream ss(a.ratios);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        ratios.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw InvalidInput("bad ratio '" + item + "'");
      }
    }
  }
  if (ratios.empty()) throw InvalidInput("no ratios given");

  if (a.endpoints_path.empty() || a.judge_endpoint.empty()) {
    throw InvalidInput("sweep needs --endpoints and --judge-endpoint");
  }
  fs::create_directories(a.out_dir);
  EndpointSet endpoints;
  endpoints.configs = modelio::load_endpoint_configs(a.endpoints_path);
  modelio::MockGroundTruth gt = modelio::MockGroundTruth::from_records(records, store);
  endpoints.ground_truth = &gt;

  const auto protocol = pipelines::protocol_from_string(a.protocol);
  modelio::Endpoint* chat_ep = nullptr;
  modelio::Endpoint* seg_ep = nullptr;
  if (protocol == pipelines::Protocol::cascade) {
    chat_ep = &endpoints.get(a.chat_endpoint);
    seg_ep = &endpoints.get(a.seg_endpoint);
  } else if (protocol == pipelines::Protocol::unified) {
    seg_ep = &endpoints.get(a.unified_endpoint);
  } else {
    seg_ep = &endpoints.get(a.seg_endpoint);
  }
  auto& judge = endpoints.get(a.judge_endpoint);
  auto ref_fn = image_ref_fn(&store);

  std::vector<evalkit::EvalReport> reports;
  nlohmann::json per_ratio = nlohmann::json::array();
  for (double ratio : ratios) {
    auto subset = evalkit::build_sweep(records, {ratio, a.seed});
    pipelines::RunOptions options;
    options.concurrency = a.concurrency;
    auto preds =
        pipelines::run_protocol(protocol, subset, ref_fn, chat_ep, seg_ep, options);
    auto report = eval_once(preds, subset, store, judge,
                            endpoints.config_for(a.judge_endpoint), ratio, a.seed);
    report.protocol = a.protocol;
    reports.push_back(report);
    per_ratio.push_back(report.to_json());
  }
  const std::string csv_path = (fs::path(a.out_dir) / "sweep.csv").string();
  const std::string md_path = (fs::path(a.out_dir) / "sweep.md").string();
  evalkit::emit_report_csv(reports, csv_path);
  evalkit::emit_report_markdown(reports, evalkit::TableShape::fp_sweep, md_path);
  std::cout << evalkit::render_report_table(reports,
                                            evalkit::TableShape::fp_sweep);

  const std::string summary =
      a.summary_path.empty() ? (fs::path(a.out_dir) / "summary.json").string()
                             : a.summary_path;
  write_summary(summary, "sweep",
                {{"records", a.records_path},
                 {"protocol", a.protocol},
                 {"ratios", a.ratios},
                 {"seed", a.seed}},
                {{"reports", per_ratio}, {"csv_digest", file_digest(csv_path)}});
  return 0;
}

// ---------------------------------------------------------------------------
// manifest

struct ManifestArgs {
  std::vector<std::string> pools;  // key=path
  std::string weights;             // key=w,key=w
  std::string tp_fp = "9:1";
  std::string out_path;
  std::string stats_path;
  std::string summary_path;
  std::int64_t total = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

bool looks_like_qa_file(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    return j.is_object() && j.contains("qa_id");
  }
  return false;
}

int run_manifest(const ManifestArgs& a) {
  if (!a.seed_set) throw InvalidInput("manifest requires --seed");
  trainprep::Pools pools;
  for (const auto& spec : a.pools) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput("--pool must look like key=path");
    }
    const std::string key = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    std::vector<trainprep::PoolItem> items;
    if (looks_like_qa_file(path)) {
      for (auto& q : augment::load_qa_records(path)) items.emplace_back(std::move(q));
    } else {
      for (auto& r : corpus::load_records(path)) items.emplace_back(std::move(r));
    }
    pools.emplace(key, std::move(items));
  }

  trainprep::MixSpec spec;
  spec.total_examples = a.total;
  spec.seed = a.seed;
  if (!a.weights.empty()) {
    spec.source_weights.clear();
    std::stringstream ss(a.weights);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw InvalidInput("--weights must look like key=w,key=w");
      }
      spec.source_weights[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    }
  } else {
    spec.source_weights.clear();
    const double defaults[] = {7.0, 2.0, 1.0};
    // Without explicit weights, pools must be named fp/vqa/rrefcoco.
    const char* names[] = {"fp", "vqa", "rrefcoco"};
    for (int i = 0; i < 3; ++i) {
      if (pools.count(names[i])) spec.source_weights[names[i]] = defaults[i];
    }
  }
  {
    int tp = 0, fp = 0;
    if (std::sscanf(a.tp_fp.c_str(), "%d:%d", &tp, &fp) != 2) {
      throw InvalidInput("--tp-fp must look like 9:1");
    }
    spec.tp_fp_ratio = {tp, fp};
  }

  auto manifest = trainprep::build_training_manifest(pools, spec);
  trainprep::write_manifest(a.out_path, manifest);
  auto stats = trainprep::manifest_stats(manifest);
  if (!a.stats_path.empty()) {
    write_file(a.stats_path, stats.to_json().dump(2) + "\n");
  }
  std::cout << stats.to_json().dump(2) << "\n";

  const std::string summary = a.summary_path.empty()
                                  ? default_summary_path(a.out_path)
                                  : a.summary_path;
  write_summary(summary, "manifest",
                {{"total", a.total}, {"seed", a.seed}, {"tp_fp", a.tp_fp}},
                {{"stats", stats.to_json()},
                 {"output_digest", file_digest(a.out_path)}});
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"false-premise referring segmentation benchmark toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file with default flag values (flags win)");

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "split statistics for a record file");
  stats_cmd->add_option("--records", stats_args.records_path)->required();
  stats_cmd->add_option("--split", stats_args.split)->required();
  stats_cmd->add_option("--tag", stats_args.tag);
  stats_cmd->add_option("--summary", stats_args.summary_path);

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand(
      "generate", "generate false-premise records via an LLM endpoint");
  gen_cmd->add_option("--mode", gen_args.mode, "fp | semantic | reasoning");
  gen_cmd->add_option("--records", gen_args.records_path);
  gen_cmd->add_option("--annotations", gen_args.annotations_path);
  auto* gen_endpoints = gen_cmd->add_option("--endpoints", gen_args.endpoints_path);
  gen_cmd->add_option("--endpoint", gen_args.endpoint_name);
  gen_cmd->add_option("--templates", gen_args.templates_path);
  gen_cmd->add_option("--out", gen_args.out_path)->required();
  gen_cmd->add_option("--combined-out", gen_args.combined_out);
  auto* gen_ledger = gen_cmd->add_option("--ledger", gen_args.ledger_path);
  gen_cmd->add_option("--summary", gen_args.summary_path);
  gen_cmd->add_option("--split", gen_args.split);
  auto* gen_seed = gen_cmd->add_option("--seed", gen_args.seed);
  auto* gen_retries = gen_cmd->add_option("--max-retries", gen_args.max_retries);
  gen_cmd->add_option("--fp-per-positive", gen_args.fp_per_positive);
  gen_cmd->add_option("--k", gen_args.k);
  gen_cmd->add_option("--distractors", gen_args.distractors);

  CleanArgs clean_args;
  auto* clean_cmd =
      app.add_subcommand("clean", "drop unusable false-premise candidates");
  clean_cmd->add_option("--candidates", clean_args.candidates_path)->required();
  clean_cmd->add_option("--positives", clean_args.positives_path)->required();
  clean_cmd->add_option("--out", clean_args.out_path)->required();
  clean_cmd->add_option("--combined-out", clean_args.combined_out);
  clean_cmd->add_option("--drop-report", clean_args.drop_report);
  clean_cmd->add_option("--ratio-band", clean_args.ratio_band);
  clean_cmd->add_option("--summary", clean_args.summary_path);

  InferArgs infer_args;
  auto* infer_cmd =
      app.add_subcommand("infer", "run an inference protocol over records");
  infer_cmd->add_option("--protocol", infer_args.protocol,
                        "cascade | unified | baseline");
  infer_cmd->add_option("--records", infer_args.records_path)->required();
  infer_cmd->add_option("--annotations", infer_args.annotations_path);
  auto* infer_endpoints =
      infer_cmd->add_option("--endpoints", infer_args.endpoints_path);
  infer_cmd->add_option("--chat-endpoint", infer_args.chat_endpoint);
  infer_cmd->add_option("--seg-endpoint", infer_args.seg_endpoint);
  infer_cmd->add_option("--unified-endpoint", infer_args.unified_endpoint);
  infer_cmd->add_option("--out", infer_args.out_path)->required();
  auto* infer_ledger = infer_cmd->add_option("--ledger", infer_args.ledger_path);
  infer_cmd->add_option("--summary", infer_args.summary_path);
  auto* infer_conc = infer_cmd->add_option("--concurrency", infer_args.concurrency);
  infer_cmd->add_flag("--dry-run", infer_args.dry_run,
                      "print the exact prompts, make no calls");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions (See/Say/Segment)");
  eval_cmd->add_option("--preds", eval_args.preds_path)->required();
  eval_cmd->add_option("--records", eval_args.records_path)->required();
  eval_cmd->add_option("--annotations", eval_args.annotations_path)->required();
  auto* eval_endpoints =
      eval_cmd->add_option("--endpoints", eval_args.endpoints_path);
  auto* eval_judge =
      eval_cmd->add_option("--judge-endpoint", eval_args.judge_endpoint);
  eval_cmd->add_option("--out", eval_args.out_path)->required();
  eval_cmd->add_option("--csv", eval_args.csv_path);
  eval_cmd->add_option("--table", eval_args.table_path);
  eval_cmd->add_option("--table-shape", eval_args.table_shape,
                       "see-say-segment | fp-sweep");
  eval_cmd->add_option("--ledger", eval_args.ledger_path);
  eval_cmd->add_option("--summary", eval_args.summary_path);
  eval_cmd->add_option("--split", eval_args.split);
  eval_cmd->add_option("--fp-ratio", eval_args.fp_ratio);
  auto* eval_seed = eval_cmd->add_option("--seed", eval_args.seed);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "infer + eval across false-premise ratios");
  sweep_cmd->add_option("--records", sweep_args.records_path)->required();
  sweep_cmd->add_option("--annotations", sweep_args.annotations_path)->required();
  auto* sweep_endpoints =
      sweep_cmd->add_option("--endpoints", sweep_args.endpoints_path);
  sweep_cmd->add_option("--protocol", sweep_args.protocol);
  sweep_cmd->add_option("--chat-endpoint", sweep_args.chat_endpoint);
  sweep_cmd->add_option("--seg-endpoint", sweep_args.seg_endpoint);
  sweep_cmd->add_option("--unified-endpoint", sweep_args.unified_endpoint);
  auto* sweep_judge =
      sweep_cmd->add_option("--judge-endpoint", sweep_args.judge_endpoint);
  sweep_cmd->add_option("--ratios", sweep_args.ratios);
  sweep_cmd->add_option("--out-dir", sweep_args.out_dir)->required();
  sweep_cmd->add_option("--split", sweep_args.split);
  sweep_cmd->add_option("--summary", sweep_args.summary_path);
  auto* sweep_seed = sweep_cmd->add_option("--seed", sweep_args.seed);
  auto* sweep_conc = sweep_cmd->add_option("--concurrency", sweep_args.concurrency);

  ManifestArgs manifest_args;
  auto* manifest_cmd = app.add_subcommand(
      "manifest", "sample a mixed training manifest from record pools");
  manifest_cmd->add_option("--pool", manifest_args.pools, "key=path, repeatable")
      ->required();
  manifest_cmd->add_option("--weights", manifest_args.weights, "key=w,key=w");
  manifest_cmd->add_option("--tp-fp", manifest_args.tp_fp);
  manifest_cmd->add_option("--total", manifest_args.total)->required();
  auto* manifest_seed = manifest_cmd->add_option("--seed", manifest_args.seed);
  manifest_cmd->add_option("--out", manifest_args.out_path)->required();
  manifest_cmd->add_option("--stats", manifest_args.stats_path);
  manifest_cmd->add_option("--summary", manifest_args.summary_path);

  std::vector<const char*> argv;
  argv.push_back("fpbench");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    ConfigOverlay config;
    if (!config_path.empty()) config.load(config_path);
    config.apply(gen_endpoints, "endpoints", gen_args.endpoints_path);
    config.apply(infer_endpoints, "endpoints", infer_args.endpoints_path);
    config.apply(eval_endpoints, "endpoints", eval_args.endpoints_path);
    config.apply(sweep_endpoints, "endpoints", sweep_args.endpoints_path);
    config.apply(eval_judge, "judge-endpoint", eval_args.judge_endpoint);
    config.apply(sweep_judge, "judge-endpoint", sweep_args.judge_endpoint);
    config.apply(infer_conc, "concurrency", infer_args.concurrency);
    config.apply(sweep_conc, "concurrency", sweep_args.concurrency);
    config.apply(gen_ledger, "ledger", gen_args.ledger_path);
    config.apply(infer_ledger, "ledger", infer_args.ledger_path);
    config.apply(gen_retries, "max-retries", gen_args.max_retries);
    if (config.doc.contains("seed")) {
      const auto seed = config.doc.at("seed").get<std::uint64_t>();
      if (gen_seed->count() == 0) gen_args.seed = seed;
      if (eval_seed->count() == 0) eval_args.seed = seed;
      if (sweep_seed->count() == 0) sweep_args.seed = seed;
      if (manifest_seed->count() == 0) manifest_args.seed = seed;
      gen_args.seed_set = eval_args.seed_set = sweep_args.seed_set =
          manifest_args.seed_set = true;
    }
    gen_args.seed_set = gen_args.seed_set || gen_seed->count() > 0;
    eval_args.seed_set = eval_args.seed_set || eval_seed->count() > 0;
    sweep_args.seed_set = sweep_args.seed_set || sweep_seed->count() > 0;
    manifest_args.seed_set = manifest_args.seed_set || manifest_seed->count() > 0;

    if (stats_cmd->parsed()) return run_stats(stats_args);
    if (gen_cmd->parsed()) return run_generate(gen_args);
    if (clean_cmd->parsed()) return run_clean(clean_args);
    if (infer_cmd->parsed()) return run_infer(infer_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (sweep_cmd->parsed()) return run_sweep(sweep_args);
    if (manifest_cmd->parsed()) return run_manifest(manifest_args);
    std::cerr << app.help();
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace fpbench::cli
