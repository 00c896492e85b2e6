#include "fpbench/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"

namespace fpbench::corpus {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::testA: return "testA";
    case Split::testB: return "testB";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "testA") return Split::testA;
  if (s == "testB") return Split::testB;
  if (s == "test") return Split::test;
  throw NotFound("unknown split '" + s + "'");
}

std::string to_string(DatasetTag t) {
  switch (t) {
    case DatasetTag::fp_refcoco: return "fp-refcoco";
    case DatasetTag::fp_refcoco_plus: return "fp-refcoco+";
    case DatasetTag::fp_refcocog: return "fp-refcocog";
    case DatasetTag::r_refcoco_family: return "r-refcoco-family";
    case DatasetTag::vqa: return "vqa";
    case DatasetTag::semantic_fp: return "semantic-fp";
    case DatasetTag::reasoning_fp: return "reasoning-fp";
  }
  return "fp-refcoco";
}

DatasetTag tag_from_string(const std::string& s) {
  if (s == "fp-refcoco") return DatasetTag::fp_refcoco;
  if (s == "fp-refcoco+") return DatasetTag::fp_refcoco_plus;
  if (s == "fp-refcocog") return DatasetTag::fp_refcocog;
  if (s == "r-refcoco-family") return DatasetTag::r_refcoco_family;
  if (s == "vqa") return DatasetTag::vqa;
  if (s == "semantic-fp") return DatasetTag::semantic_fp;
  if (s == "reasoning-fp") return DatasetTag::reasoning_fp;
  throw NotFound("unknown dataset tag '" + s + "'");
}

bool is_fp_refcoco_family(DatasetTag t) {
  return t == DatasetTag::fp_refcoco || t == DatasetTag::fp_refcoco_plus ||
         t == DatasetTag::fp_refcocog;
}

AnnotationStore::AnnotationStore(std::vector<ImageInfo> images,
                                 std::vector<Annotation> annotations,
                                 std::vector<Category> categories) {
  for (auto& im : images) {
    if (!images_.emplace(im.id, std::move(im)).second) {
      throw IntegrityError("duplicate image id " + std::to_string(im.id));
    }
  }
  for (auto& cat : categories) {
    if (!categories_.emplace(cat.id, std::move(cat)).second) {
      throw IntegrityError("duplicate category id " + std::to_string(cat.id));
    }
  }
  for (auto& ann : annotations) {
    if (!annotations_.emplace(ann.id, std::move(ann)).second) {
      throw IntegrityError("duplicate annotation id " + std::to_string(ann.id));
    }
  }
  validate();
}

namespace {

Segmentation parse_segmentation(const nlohmann::json& seg) {
  if (seg.is_array()) {
    maskops::PolygonSet polys;
    for (const auto& p : seg) {
      polys.push_back(p.get<maskops::Polygon>());
    }
    return polys;
  }
  if (seg.is_object()) {
    return maskops::RleMask::from_json(seg);
  }
  throw ParseError("segmentation must be a polygon list or an RLE object");
}

nlohmann::json segmentation_to_json(const Segmentation& seg) {
  if (const auto* polys = std::get_if<maskops::PolygonSet>(&seg)) {
    return nlohmann::json(*polys);
  }
  return std::get<maskops::RleMask>(seg).to_json();
}

}  // namespace

AnnotationStore AnnotationStore::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed annotations JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("images") ||
      !doc.contains("annotations") || !doc.contains("categories")) {
    throw ParseError("annotations file must contain images/annotations/categories");
  }
  std::vector<ImageInfo> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;
  try {
    for (const auto& j : doc.at("images")) {
      ImageInfo im;
      im.id = j.at("id").get<std::int64_t>();
      im.file_name = j.at("file_name").get<std::string>();
      im.height = j.at("height").get<int>();
      im.width = j.at("width").get<int>();
      images.push_back(std::move(im));
    }
    for (const auto& j : doc.at("annotations")) {
      Annotation ann;
      ann.id = j.at("id").get<std::int64_t>();
      ann.image_id = j.at("image_id").get<std::int64_t>();
      ann.category_id = j.at("category_id").get<std::int64_t>();
      auto bbox = j.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) {
        throw ParseError("annotation " + std::to_string(ann.id) +
                         ": bbox must have 4 entries");
      }
      std::copy(bbox.begin(), bbox.end(), ann.bbox.begin());
      ann.segmentation = parse_segmentation(j.at("segmentation"));
      annotations.push_back(std::move(ann));
    }
    for (const auto& j : doc.at("categories")) {
      Category cat;
      cat.id = j.at("id").get<std::int64_t>();
      cat.name = j.at("name").get<std::string>();
      categories.push_back(std::move(cat));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed annotations JSON: ") + e.what());
  }
  return AnnotationStore(std::move(images), std::move(annotations),
                         std::move(categories));
}

void AnnotationStore::validate() const {
  for (const auto& [id, ann] : annotations_) {
    auto im_it = images_.find(ann.image_id);
    if (im_it == images_.end()) {
      throw IntegrityError("annotation " + std::to_string(id) + ": image " +
                           std::to_string(ann.image_id) + " not found");
    }
    if (categories_.find(ann.category_id) == categories_.end()) {
      throw IntegrityError("annotation " + std::to_string(id) + ": category " +
                           std::to_string(ann.category_id) + " not found");
    }
    const auto& im = im_it->second;
    const auto& b = ann.bbox;
    if (b[0] < 0 || b[1] < 0 || b[0] + b[2] > im.width ||
        b[1] + b[3] > im.height) {
      throw IntegrityError("annotation " + std::to_string(id) +
                           ": bbox out of image bounds");
    }
  }
}

const ImageInfo& AnnotationStore::image(std::int64_t id) const {
  auto it = images_.find(id);
  if (it == images_.end()) throw NotFound("image " + std::to_string(id) + " not found");
  return it->second;
}

const Annotation& AnnotationStore::annotation(std::int64_t id) const {
  auto it = annotations_.find(id);
  if (it == annotations_.end()) {
    throw NotFound("annotation " + std::to_string(id) + " not found");
  }
  return it->second;
}

const Category& AnnotationStore::category(std::int64_t id) const {
  auto it = categories_.find(id);
  if (it == categories_.end()) {
    throw NotFound("category " + std::to_string(id) + " not found");
  }
  return it->second;
}

maskops::BitMask AnnotationStore::annotation_mask(std::int64_t ann_id) const {
  const auto& ann = annotation(ann_id);
  const auto& im = image(ann.image_id);
  if (const auto* polys = std::get_if<maskops::PolygonSet>(&ann.segmentation)) {
    return maskops::rasterize_polygons(*polys, im.height, im.width);
  }
  const auto& rle = std::get<maskops::RleMask>(ann.segmentation);
  auto mask = maskops::rle_decode(rle);
  if (mask.height() != im.height || mask.width() != im.width) {
    throw ShapeError("annotation " + std::to_string(ann_id) +
                     ": RLE size does not match image dimensions");
  }
  return mask;
}

std::string AnnotationStore::image_ref(std::int64_t image_id) const {
  return image(image_id).file_name;
}

nlohmann::json RefRecord::to_json() const {
  nlohmann::json j;
  j["sent_id"] = sent_id;
  j["image_id"] = image_id;
  j["ann_id"] = ann_id;
  j["split"] = to_string(split);
  j["sentence"] = sentence;
  j["is_false_premise"] = is_false_premise;
  j["source_sent_id"] =
      source_sent_id ? nlohmann::json(*source_sent_id) : nlohmann::json(nullptr);
  j["correction"] =
      correction ? nlohmann::json(*correction) : nlohmann::json(nullptr);
  j["dataset_tag"] = to_string(dataset_tag);
  return j;
}

namespace {

const std::set<std::string> kRecordKeys = {
    "sent_id",   "image_id",   "ann_id",          "split",      "sentence",
    "is_false_premise", "source_sent_id", "correction", "dataset_tag"};

std::optional<std::string> opt_string(const nlohmann::json& j,
                                      const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw ParseError(std::string(key) + " must be a string or null");
  return v.get<std::string>();
}

}  // namespace

RefRecord RefRecord::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kRecordKeys.count(key)) {
      throw ParseError("unexpected field '" + key + "'");
    }
  }
  for (const auto& key : kRecordKeys) {
    if (!j.contains(key)) throw ParseError("missing field '" + key + "'");
  }
  RefRecord r;
  try {
    r.sent_id = j.at("sent_id").get<std::string>();
    r.image_id = j.at("image_id").get<std::int64_t>();
    r.ann_id = j.at("ann_id").get<std::int64_t>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.sentence = j.at("sentence").get<std::string>();
    r.is_false_premise = j.at("is_false_premise").get<bool>();
    r.source_sent_id = opt_string(j, "source_sent_id");
    r.correction = opt_string(j, "correction");
    r.dataset_tag = tag_from_string(j.at("dataset_tag").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad record field: ") + e.what());
  } catch (const NotFound& e) {
    throw ParseError(e.what());
  }
  if (r.sent_id.empty()) throw ParseError("sent_id must be non-empty");
  // Field-presence rules that hold line-locally. Cross-record linkage is
  // checked in validate_records once the whole file is in memory.
  if (r.is_false_premise) {
    if (is_fp_refcoco_family(r.dataset_tag)) {
      if (!r.source_sent_id) throw ParseError("missing source_sent_id");
      if (!r.correction) throw ParseError("missing correction");
    }
  } else {
    if (r.source_sent_id) {
      throw ParseError("source_sent_id set on a positive record");
    }
    if (r.correction) throw ParseError("correction set on a positive record");
  }
  return r;
}

std::string record_line(const RefRecord& r) { return r.to_json().dump(); }

std::vector<RefRecord> load_records(const std::string& path,
                                    std::optional<DatasetTag> tag_filter,
                                    bool validate_links) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open records file: " + path);
  std::vector<RefRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      RefRecord r = RefRecord::from_json(j);
      if (!tag_filter || r.dataset_tag == *tag_filter) {
        records.push_back(std::move(r));
      }
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (validate_links) {
    validate_records(records);
  } else {
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.sent_id).second) {
        throw IntegrityError("duplicate sent_id '" + r.sent_id + "'");
      }
    }
  }
  return records;
}

void validate_records(const std::vector<RefRecord>& records) {
  std::unordered_map<std::string, const RefRecord*> by_id;
  by_id.reserve(records.size());
  for (const auto& r : records) {
    auto [it, inserted] = by_id.emplace(r.sent_id, &r);
    if (!inserted) {
      throw IntegrityError("duplicate sent_id '" + r.sent_id + "'");
    }
  }
  for (const auto& r : records) {
    if (!r.is_false_premise) continue;
    if (!r.source_sent_id) continue;  // rejection-only tags carry no link
    auto it = by_id.find(*r.source_sent_id);
    if (it == by_id.end()) {
      throw IntegrityError("record '" + r.sent_id + "': source_sent_id '" +
                           *r.source_sent_id + "' not found");
    }
    const RefRecord& src = *it->second;
    if (src.is_false_premise) {
      throw IntegrityError("record '" + r.sent_id +
                           "': source record is itself a false premise");
    }
    if (src.image_id != r.image_id || src.ann_id != r.ann_id) {
      throw IntegrityError("record '" + r.sent_id +
                           "': source record refers to a different referent");
    }
    if (is_fp_refcoco_family(r.dataset_tag) && r.correction != src.sentence) {
      throw IntegrityError("record '" + r.sent_id +
                           "': correction does not equal the source sentence");
    }
  }
}

void write_records(const std::string& path,
                   const std::vector<RefRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    out << record_line(r) << '\n';
  }
  write_file(path, out.str());
}

SplitStats compute_stats(const std::vector<RefRecord>& records, Split split) {
  SplitStats stats;
  std::unordered_set<std::int64_t> images;
  std::unordered_set<std::int64_t> objects;
  for (const auto& r : records) {
    if (r.split != split) continue;
    images.insert(r.image_id);
    objects.insert(r.ann_id);
    ++stats.sentences;
    if (r.is_false_premise) {
      ++stats.negative_sentences;
    } else {
      ++stats.positive_sentences;
    }
  }
  if (stats.sentences == 0) {
    throw NotFound("no records in split '" + to_string(split) + "'");
  }
  stats.images = static_cast<std::int64_t>(images.size());
  stats.objects = static_cast<std::int64_t>(objects.size());
  return stats;
}

SplitStats compute_stats(const std::vector<RefRecord>& records,
                         const std::string& split_name) {
  return compute_stats(records, split_from_string(split_name));
}

ContaminationResult filter_contamination(
    const std::vector<RefRecord>& train_records,
    const std::vector<RefRecord>& eval_records) {
  std::unordered_set<std::int64_t> eval_images;
  for (const auto& r : eval_records) eval_images.insert(r.image_id);
  ContaminationResult result;
  for (const auto& r : train_records) {
    if (eval_images.count(r.image_id)) {
      result.dropped.push_back(r);
    } else {
      result.kept.push_back(r);
    }
  }
  return result;
}

}  // namespace fpbench::corpus
