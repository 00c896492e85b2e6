#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fpbench/maskops.hpp"

namespace fpbench::corpus {

enum class Split { train, val, testA, testB, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);  // throws NotFound

enum class DatasetTag {
  fp_refcoco,
  fp_refcoco_plus,
  fp_refcocog,
  r_refcoco_family,
  vqa,
  semantic_fp,
  reasoning_fp,
};

std::string to_string(DatasetTag t);
DatasetTag tag_from_string(const std::string& s);  // throws NotFound

/// True for the FP-RefCOCO(+/g) family, whose false-premise records must
/// carry a resolvable source link and the source sentence as correction.
/// Rejection-only sources (r-refcoco-family, semantic-fp, reasoning-fp)
/// deliberately have no correction.
bool is_fp_refcoco_family(DatasetTag t);

using Segmentation = std::variant<maskops::PolygonSet, maskops::RleMask>;

struct ImageInfo {
  std::int64_t id = 0;
  std::string file_name;
  int height = 0;
  int width = 0;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::array<double, 4> bbox{};  // [x, y, w, h]
  Segmentation segmentation;
};

struct Category {
  std::int64_t id = 0;
  std::string name;
};

/// Cross-linked COCO-instances substrate. Immutable after construction;
/// safe to share across concurrent readers.
class AnnotationStore {
 public:
  AnnotationStore() = default;
  AnnotationStore(std::vector<ImageInfo> images,
                  std::vector<Annotation> annotations,
                  std::vector<Category> categories);

  static AnnotationStore load(const std::string& path);

  const std::map<std::int64_t, ImageInfo>& images() const { return images_; }
  const std::map<std::int64_t, Annotation>& annotations() const {
    return annotations_;
  }
  const std::map<std::int64_t, Category>& categories() const {
    return categories_;
  }

  const ImageInfo& image(std::int64_t id) const;            // NotFound
  const Annotation& annotation(std::int64_t id) const;      // NotFound
  const Category& category(std::int64_t id) const;          // NotFound

  /// Ground-truth mask for one annotation at its image's dimensions.
  maskops::BitMask annotation_mask(std::int64_t ann_id) const;

  /// file_name of the annotation's image; used as the image reference
  /// handed to model endpoints.
  std::string image_ref(std::int64_t image_id) const;

 private:
  void validate() const;

  std::map<std::int64_t, ImageInfo> images_;
  std::map<std::int64_t, Annotation> annotations_;
  std::map<std::int64_t, Category> categories_;
};

struct RefRecord {
  std::string sent_id;
  std::int64_t image_id = 0;
  std::int64_t ann_id = 0;
  Split split = Split::train;
  std::string sentence;
  bool is_false_premise = false;
  std::optional<std::string> source_sent_id;
  std::optional<std::string> correction;
  DatasetTag dataset_tag = DatasetTag::fp_refcoco;

  nlohmann::json to_json() const;
  static RefRecord from_json(const nlohmann::json& j);

  bool operator==(const RefRecord&) const = default;
};

/// Canonical single-line serialization: the nine schema keys sorted, UTF-8,
/// no trailing whitespace. Round-trips byte-exactly.
std::string record_line(const RefRecord& r);

/// validate_links=false loads a file fragment (for example a candidate
/// false-premise file whose sources live elsewhere); schema and duplicate
/// checks still apply.
std::vector<RefRecord> load_records(
    const std::string& path,
    std::optional<DatasetTag> tag_filter = std::nullopt,
    bool validate_links = true);

/// Schema was checked per line on load; this checks the cross-record
/// invariants (unique sent_id, source linkage, correction equality).
void validate_records(const std::vector<RefRecord>& records);

void write_records(const std::string& path,
                   const std::vector<RefRecord>& records);

struct SplitStats {
  std::int64_t images = 0;
  std::int64_t objects = 0;
  std::int64_t sentences = 0;
  std::int64_t positive_sentences = 0;
  std::int64_t negative_sentences = 0;

  bool operator==(const SplitStats&) const = default;
};

SplitStats compute_stats(const std::vector<RefRecord>& records, Split split);
SplitStats compute_stats(const std::vector<RefRecord>& records,
                         const std::string& split_name);

struct ContaminationResult {
  std::vector<RefRecord> kept;
  std::vector<RefRecord> dropped;
};

/// Keeps exactly the train records whose image appears in no eval record.
ContaminationResult filter_contamination(
    const std::vector<RefRecord>& train_records,
    const std::vector<RefRecord>& eval_records);

}  // namespace fpbench::corpus
