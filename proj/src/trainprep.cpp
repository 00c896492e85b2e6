#include "fpbench/trainprep.hpp"

#include <sstream>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"

namespace fpbench::trainprep {

namespace {

nlohmann::json turn_to_json(const ConvTurn& t) {
  return nlohmann::json{
      {"role", t.role},
      {"text", t.text},
      {"image_ref", t.image_ref ? nlohmann::json(*t.image_ref) : nlohmann::json(nullptr)},
      {"mask_ref", t.mask_ref ? nlohmann::json(*t.mask_ref) : nlohmann::json(nullptr)}};
}

ConvTurn turn_from_json(const nlohmann::json& j) {
  ConvTurn t;
  t.role = j.at("role").get<std::string>();
  t.text = j.at("text").get<std::string>();
  if (!j.at("image_ref").is_null()) t.image_ref = j.at("image_ref").get<std::string>();
  if (!j.at("mask_ref").is_null()) t.mask_ref = j.at("mask_ref").get<std::string>();
  return t;
}

bool question_shaped(const std::string& sentence) {
  auto t = trim(sentence);
  return !t.empty() && t.back() == '?';
}

ManifestEntry entry_for_ref(const std::string& pool_key,
                            const corpus::RefRecord& r) {
  ManifestEntry e;
  e.source_tag = pool_key;
  e.id = r.sent_id;
  const std::string image_ref = "image:" + std::to_string(r.image_id);
  ConvTurn user;
  user.role = "user";
  user.image_ref = image_ref;
  user.text = question_shaped(r.sentence)
                  ? r.sentence
                  : "Please segment " + r.sentence + " in the image.";
  e.conversation.push_back(std::move(user));
  ConvTurn assistant;
  assistant.role = "assistant";
  if (!r.is_false_premise) {
    e.kind = "positive";
    assistant.text = "Sure, it is [SEG].";
    assistant.mask_ref = "ann:" + std::to_string(r.ann_id);
  } else {
    e.kind = "false-premise";
    if (r.correction) {
      assistant.text = "No, there is no " + r.sentence +
                       " in the image. Did you mean " + *r.correction + "?";
    } else if (question_shaped(r.sentence)) {
      assistant.text = "No, the requested object is not present in the image.";
    } else {
      assistant.text = "No, there is no " + r.sentence + " in the image.";
    }
  }
  e.conversation.push_back(std::move(assistant));
  return e;
}

ManifestEntry entry_for_qa(const std::string& pool_key,
                           const augment::QaRecord& q) {
  ManifestEntry e;
  e.source_tag = pool_key;
  e.id = q.qa_id;
  e.kind = "qa";
  ConvTurn user;
  user.role = "user";
  user.text = q.question;
  user.image_ref = q.image_ref;
  e.conversation.push_back(std::move(user));
  ConvTurn assistant;
  assistant.role = "assistant";
  assistant.text = q.answer;
  e.conversation.push_back(std::move(assistant));
  return e;
}

bool is_fp_family_pool(const std::vector<PoolItem>& items) {
  for (const auto& item : items) {
    if (const auto* r = std::get_if<corpus::RefRecord>(&item)) {
      if (corpus::is_fp_refcoco_family(r->dataset_tag)) return true;
    }
  }
  return false;
}

}  // namespace

nlohmann::json ManifestEntry::to_json() const {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& t : conversation) conv.push_back(turn_to_json(t));
  return nlohmann::json{{"source_tag", source_tag},
                        {"id", id},
                        {"kind", kind},
                        {"conversation", conv}};
}

ManifestEntry ManifestEntry::from_json(const nlohmann::json& j) {
  ManifestEntry e;
  try {
    e.source_tag = j.at("source_tag").get<std::string>();
    e.id = j.at("id").get<std::string>();
    e.kind = j.at("kind").get<std::string>();
    for (const auto& t : j.at("conversation")) {
      e.conversation.push_back(turn_from_json(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("bad manifest entry: ") + ex.what());
  }
  return e;
}

std::vector<ManifestEntry> build_training_manifest(const Pools& pools,
                                                   const MixSpec& spec) {
  if (spec.total_examples < 1) {
    throw InvalidInput("total_examples must be >= 1");
  }
  if (spec.tp_fp_ratio.first < 1 || spec.tp_fp_ratio.second < 1) {
    throw InvalidInput("tp_fp_ratio components must be positive");
  }
  struct Source {
    std::string key;
    double weight;
    const std::vector<PoolItem>* items;
    bool balanced;  // fp-family pool: apply the tp:fp ratio
    std::vector<const PoolItem*> tp;
    std::vector<const PoolItem*> fp;
  };
  std::vector<Source> sources;
  double total_weight = 0.0;
  for (const auto& [key, weight] : spec.source_weights) {
    if (weight <= 0.0) {
      throw InvalidInput("weight for source '" + key + "' must be positive");
    }
    auto it = pools.find(key);
    if (it == pools.end() || it->second.empty()) {
      throw InvalidInput("source pool '" + key + "' is empty");
    }
    Source s;
    s.key = key;
    s.weight = weight;
    s.items = &it->second;
    s.balanced = is_fp_family_pool(it->second);
    if (s.balanced) {
      for (const auto& item : it->second) {
        const auto* r = std::get_if<corpus::RefRecord>(&item);
        if (!r) {
          throw InvalidInput("pool '" + key +
                             "' mixes qa records into a referring pool");
        }
        (r->is_false_premise ? s.fp : s.tp).push_back(&item);
      }
      if (s.tp.empty() || s.fp.empty()) {
        throw InvalidInput("pool '" + key +
                           "' needs both true and false premises for the " +
                           std::to_string(spec.tp_fp_ratio.first) + ":" +
                           std::to_string(spec.tp_fp_ratio.second) + " mix");
      }
    }
    total_weight += weight;
    sources.push_back(std::move(s));
  }

  std::vector<ManifestEntry> manifest;
  manifest.reserve(static_cast<std::size_t>(spec.total_examples));
  const std::string seed_str = std::to_string(spec.seed);
  for (std::int64_t i = 0; i < spec.total_examples; ++i) {
    // Counter-based seeding keeps entry i independent of every other
    // entry, so the manifest is reproducible under any generation order.
    SplitRng rng(fnv1a64(seed_str + "#" + std::to_string(i)));
    double u = rng.uniform01() * total_weight;
    const Source* src = &sources.back();
    for (const auto& s : sources) {
      if (u < s.weight) {
        src = &s;
        break;
      }
      u -= s.weight;
    }
    const PoolItem* item = nullptr;
    if (src->balanced) {
      const auto [tp_w, fp_w] = spec.tp_fp_ratio;
      const bool take_tp =
          rng.uniform_below(static_cast<std::uint64_t>(tp_w + fp_w)) <
          static_cast<std::uint64_t>(tp_w);
      const auto& bucket = take_tp ? src->tp : src->fp;
      item = bucket[rng.uniform_below(bucket.size())];
    } else {
      item = &(*src->items)[rng.uniform_below(src->items->size())];
    }
    if (const auto* r = std::get_if<corpus::RefRecord>(item)) {
      manifest.push_back(entry_for_ref(src->key, *r));
    } else {
      manifest.push_back(entry_for_qa(src->key, std::get<augment::QaRecord>(*item)));
    }
  }
  return manifest;
}

nlohmann::json ManifestStats::to_json() const {
  nlohmann::json j;
  j["total"] = total;
  j["per_source"] = per_source;
  j["source_fraction"] = source_fraction;
  j["tp_per_source"] = tp_per_source;
  j["fp_per_source"] = fp_per_source;
  return j;
}

ManifestStats manifest_stats(const std::vector<ManifestEntry>& manifest) {
  if (manifest.empty()) throw InvalidInput("manifest is empty");
  ManifestStats stats;
  stats.total = static_cast<std::int64_t>(manifest.size());
  for (const auto& e : manifest) {
    ++stats.per_source[e.source_tag];
    if (e.kind == "positive") ++stats.tp_per_source[e.source_tag];
    if (e.kind == "false-premise") ++stats.fp_per_source[e.source_tag];
  }
  for (const auto& [key, count] : stats.per_source) {
    stats.source_fraction[key] =
        static_cast<double>(count) / static_cast<double>(stats.total);
  }
  return stats;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::vector<ManifestEntry> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(ManifestEntry::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& manifest) {
  std::string out;
  for (const auto& e : manifest) {
    out += e.to_json().dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace fpbench::trainprep
