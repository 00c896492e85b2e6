#include "fpbench/augment.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"

namespace fpbench::augment {

std::string build_fp_prompt(const std::vector<std::string>& sentences) {
  return prompts::fp_augment_prompt(sentences);
}

std::vector<std::string> parse_fp_response(const std::string& raw,
                                           std::size_t n_expected) {
  if (n_expected < 1) throw InvalidInput("n_expected must be >= 1");
  auto slice = prompts::find_bracketed_list(raw, "altered:");
  if (!slice) {
    throw ParseError("no bracketed list after 'Altered:' in response");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*slice);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("unparseable altered list: ") + e.what());
  }
  if (!j.is_array()) throw ParseError("altered list is not an array");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    if (!item.is_string()) throw ParseError("altered list item is not a string");
    out.push_back(item.get<std::string>());
  }
  if (out.size() != n_expected) throw LengthMismatch(out.size(), n_expected);
  return out;
}

namespace {

constexpr std::size_t kMaxBatchSentences = 25;

struct ImageGroup {
  std::int64_t image_id = 0;
  std::vector<const corpus::RefRecord*> positives;
};

std::vector<ImageGroup> group_by_image(
    const std::vector<corpus::RefRecord>& positives) {
  std::vector<ImageGroup> groups;
  std::unordered_map<std::int64_t, std::size_t> index;
  for (const auto& r : positives) {
    if (r.is_false_premise) {
      throw InvalidInput("record '" + r.sent_id +
                         "' is a false premise; positives only");
    }
    auto it = index.find(r.image_id);
    if (it == index.end()) {
      index.emplace(r.image_id, groups.size());
      groups.push_back({r.image_id, {&r}});
    } else {
      groups[it->second].positives.push_back(&r);
    }
  }
  return groups;
}

}  // namespace

std::vector<corpus::RefRecord> generate_fp_records(
    const std::vector<corpus::RefRecord>& positive_records,
    modelio::Endpoint& llm, std::uint64_t seed, const GenerationPolicy& policy,
    GenerationReport* report) {
  GenerationReport local;
  GenerationReport& rep = report ? *report : local;
  auto groups = group_by_image(positive_records);
  std::vector<corpus::RefRecord> out;

  for (const auto& group : groups) {
    for (int round = 1; round <= policy.fp_per_positive; ++round) {
      for (std::size_t chunk = 0; chunk < group.positives.size();
           chunk += kMaxBatchSentences) {
        const std::size_t end =
            std::min(chunk + kMaxBatchSentences, group.positives.size());
        std::vector<std::string> sentences;
        for (std::size_t i = chunk; i < end; ++i) {
          sentences.push_back(group.positives[i]->sentence);
        }
        AugmentationBatch batch;
        batch.image_id = group.image_id;
        for (std::size_t i = chunk; i < end; ++i) {
          batch.inputs.emplace_back(group.positives[i]->sent_id,
                                    group.positives[i]->sentence);
        }

        modelio::ChatRequest req;
        req.messages.push_back({"user", build_fp_prompt(sentences), std::nullopt});
        req.decoding.temperature = policy.temperature;
        req.decoding.max_tokens = policy.max_tokens;

        ++rep.batches;
        bool parsed = false;
        bool transport_failed = false;
        for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
          if (attempt > 0) ++rep.retries;
          try {
            batch.raw_response = llm.chat(req).text;
          } catch (const UpstreamError&) {
            transport_failed = true;
            break;
          }
          try {
            batch.altered = parse_fp_response(batch.raw_response, sentences.size());
            parsed = true;
            break;
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::Parse &&
                e.kind() != ErrorKind::LengthMismatch) {
              throw;
            }
          }
        }
        if (transport_failed) {
          rep.failed_image_ids.push_back(group.image_id);
          continue;
        }
        if (!parsed) {
          ++rep.dropped_batches;
          continue;
        }
        for (std::size_t i = chunk; i < end; ++i) {
          const corpus::RefRecord& src = *group.positives[i];
          corpus::RefRecord fp;
          fp.sent_id = src.sent_id + "#fp" + std::to_string(round);
          fp.image_id = src.image_id;
          fp.ann_id = src.ann_id;
          fp.split = src.split;
          fp.sentence = (*batch.altered)[i - chunk];
          fp.is_false_premise = true;
          fp.source_sent_id = src.sent_id;
          fp.correction = src.sentence;
          fp.dataset_tag = src.dataset_tag;
          out.push_back(std::move(fp));
        }
      }
    }
  }
  (void)seed;  // decoding is temperature-0 by default; the seed is reserved
               // for sampling policies and recorded with the run
  if (!rep.failed_image_ids.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < rep.failed_image_ids.size() && i < 16; ++i) {
      ids += (i ? "," : "") + std::to_string(rep.failed_image_ids[i]);
    }
    throw UpstreamError("incomplete augmentation batches for image(s): " + ids);
  }
  return out;
}

std::vector<corpus::RefRecord> clean_dataset(
    const std::vector<corpus::RefRecord>& candidates,
    const std::vector<corpus::RefRecord>& positive_records,
    CleanReport* report) {
  CleanReport local;
  CleanReport& rep = report ? *report : local;

  std::unordered_map<std::string, const corpus::RefRecord*> positives_by_id;
  std::unordered_map<std::int64_t, std::unordered_set<std::string>>
      positives_by_image;
  for (const auto& p : positive_records) {
    positives_by_id.emplace(p.sent_id, &p);
    positives_by_image[p.image_id].insert(p.sentence);
  }

  std::unordered_map<std::int64_t, std::unordered_set<std::string>> seen;
  std::vector<corpus::RefRecord> kept;
  kept.reserve(candidates.size());

  for (const auto& c : candidates) {
    std::string source_sentence;
    if (c.correction) {
      source_sentence = *c.correction;
    } else if (c.source_sent_id) {
      auto it = positives_by_id.find(*c.source_sent_id);
      if (it != positives_by_id.end()) source_sentence = it->second->sentence;
    }

    if (!source_sentence.empty() &&
        normalize_sentence(c.sentence) == normalize_sentence(source_sentence)) {
      ++rep.dropped_identical;
      rep.entries.push_back({c.image_id, "identical-to-source", c.sentence});
      continue;
    }
    if (seen[c.image_id].count(c.sentence)) {
      ++rep.dropped_duplicate;
      rep.entries.push_back({c.image_id, "duplicate", c.sentence});
      continue;
    }
    auto pos_it = positives_by_image.find(c.image_id);
    if (pos_it != positives_by_image.end() &&
        pos_it->second.count(c.sentence)) {
      ++rep.dropped_collides_positive;
      rep.entries.push_back({c.image_id, "collides-positive", c.sentence});
      continue;
    }
    if (!source_sentence.empty() &&
        word_edit_distance(c.sentence, source_sentence) > 2) {
      ++rep.edit_distance_warnings;
    }
    seen[c.image_id].insert(c.sentence);
    kept.push_back(c);
  }
  return kept;
}

void FpTemplate::validate() const {
  const std::string slot = "{category}";
  std::size_t first = pattern.find(slot);
  if (first == std::string::npos ||
      pattern.find(slot, first + 1) != std::string::npos) {
    throw InvalidInput("template pattern must contain exactly one {category} slot");
  }
}

namespace {

std::string replace_slot(const std::string& pattern,
                         const std::string& category) {
  std::string out = pattern;
  std::size_t pos;
  while ((pos = out.find("{category}")) != std::string::npos) {
    out.replace(pos, 10, category);
  }
  return out;
}

}  // namespace

std::string FpTemplate::instantiate(const std::string& category) const {
  return replace_slot(pattern, category);
}

std::string FpTemplate::instantiate_answer(const std::string& category) const {
  return replace_slot(answer_pattern, category);
}

std::vector<corpus::RefRecord> generate_semantic_fp(
    std::int64_t image_id, corpus::Split split,
    const std::set<std::string>& image_categories,
    const std::set<std::string>& all_categories,
    const std::vector<FpTemplate>& templates, std::uint64_t seed, int k) {
  if (k < 1) throw InvalidInput("k must be >= 1");
  if (templates.empty()) throw InvalidInput("no templates given");
  for (const auto& t : templates) t.validate();
  for (const auto& c : image_categories) {
    if (!all_categories.count(c)) {
      throw InvalidInput("image category '" + c +
                         "' is not in the category universe");
    }
  }
  std::vector<std::string> absent;
  for (const auto& c : all_categories) {
    if (!image_categories.count(c)) absent.push_back(c);
  }
  if (static_cast<std::size_t>(k) > absent.size()) {
    throw InvalidInput("k=" + std::to_string(k) + " exceeds the " +
                       std::to_string(absent.size()) + " absent categories");
  }
  SplitRng rng(seed);
  auto picks = rng.sample_without_replacement(absent.size(), k);
  std::vector<corpus::RefRecord> out;
  for (std::size_t pi = 0; pi < picks.size(); ++pi) {
    const std::string& category = absent[picks[pi]];
    for (std::size_t ti = 0; ti < templates.size(); ++ti) {
      corpus::RefRecord r;
      r.sent_id = "sem-" + std::to_string(image_id) + "-" +
                  std::to_string(pi) + "-" + std::to_string(ti);
      r.image_id = image_id;
      r.ann_id = 0;  // no referent exists
      r.split = split;
      r.sentence = templates[ti].instantiate(category);
      r.is_false_premise = true;
      r.dataset_tag = corpus::DatasetTag::semantic_fp;
      out.push_back(std::move(r));
    }
  }
  return out;
}

nlohmann::json QaRecord::to_json() const {
  return nlohmann::json{{"qa_id", qa_id},
                        {"image_ref", image_ref},
                        {"question", question},
                        {"answer", answer},
                        {"dataset_tag", corpus::to_string(tag)}};
}

QaRecord QaRecord::from_json(const nlohmann::json& j) {
  QaRecord r;
  try {
    r.qa_id = j.at("qa_id").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.tag = corpus::tag_from_string(j.at("dataset_tag").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad qa record: ") + e.what());
  } catch (const NotFound& e) {
    throw ParseError(e.what());
  }
  return r;
}

std::vector<QaRecord> load_qa_records(const std::string& path) {
  std::vector<QaRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(QaRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void write_qa_records(const std::string& path,
                      const std::vector<QaRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json().dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<QaRecord> generate_reasoning_fp(
    modelio::Endpoint& vision_llm, const std::string& image_ref,
    const std::vector<std::string>& distractor_queries, std::uint64_t seed,
    const ReasoningPolicy& policy) {
  if (distractor_queries.empty()) {
    throw InvalidInput("at least one distractor query is required");
  }
  SplitRng rng(seed);
  auto order = rng.permutation(distractor_queries.size());
  std::vector<std::string> chosen;
  for (std::size_t i = 0;
       i < order.size() && chosen.size() < static_cast<std::size_t>(policy.max_distractors);
       ++i) {
    chosen.push_back(distractor_queries[order[i]]);
  }

  modelio::ChatRequest req;
  req.messages.push_back({"user", prompts::reasoning_fp_prompt(chosen), image_ref});
  req.decoding.temperature = policy.temperature;
  req.decoding.max_tokens = policy.max_tokens;

  std::string raw;
  std::optional<nlohmann::json> pairs;
  for (int attempt = 0; attempt <= policy.max_retries && !pairs; ++attempt) {
    raw = vision_llm.chat(req).text;
    auto slice = prompts::find_bracketed_list(raw, "pairs:");
    if (!slice) continue;
    try {
      auto j = nlohmann::json::parse(*slice);
      if (j.is_array()) pairs = std::move(j);
    } catch (const nlohmann::json::exception&) {
    }
  }
  if (!pairs) {
    throw ParseError("no parseable 'Pairs:' list for image " + image_ref);
  }
  std::vector<QaRecord> out;
  std::size_t idx = 0;
  for (const auto& pair : *pairs) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
        !pair[1].is_string()) {
      throw ParseError("pair " + std::to_string(idx) +
                       " is not a [question, answer] string pair");
    }
    QaRecord r;
    r.qa_id = "rfp-" + fnv1a64_hex(image_ref) + "-" + std::to_string(idx);
    r.image_ref = image_ref;
    r.question = pair[0].get<std::string>();
    r.answer = pair[1].get<std::string>();
    r.tag = corpus::DatasetTag::reasoning_fp;
    out.push_back(std::move(r));
    ++idx;
  }
  return out;
}

}  // namespace fpbench::augment
