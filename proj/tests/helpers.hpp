#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fpbench/augment.hpp"
#include "fpbench/corpus.hpp"
#include "fpbench/maskops.hpp"
#include "fpbench/modelio.hpp"

namespace fptest {

using fpbench::corpus::AnnotationStore;
using fpbench::corpus::RefRecord;
using fpbench::maskops::BitMask;
using fpbench::maskops::Polygon;
using fpbench::maskops::PolygonSet;

inline BitMask random_mask(std::mt19937_64& rng, int h, int w,
                           double density = 0.5) {
  BitMask m(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (u(rng) < density) m.set(r, c);
    }
  }
  return m;
}

// Classic per-pixel ray cast, the independent reference for the scanline
// rasterizer. Same crossing arithmetic, entirely different fill logic.
inline bool pnpoly_contains(const Polygon& poly, double cx, double cy) {
  const std::size_t n = poly.size() / 2;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[2 * i], yi = poly[2 * i + 1];
    const double xj = poly[2 * j], yj = poly[2 * j + 1];
    if (((yi > cy) != (yj > cy)) &&
        (cx < (xj - xi) * (cy - yi) / (yj - yi) + xi)) {
      inside = !inside;
    }
  }
  return inside;
}

inline BitMask rasterize_oracle(const PolygonSet& polys, int h, int w) {
  BitMask m(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (const auto& poly : polys) {
        if (pnpoly_contains(poly, c + 0.5, r + 0.5)) {
          m.set(r, c);
          break;
        }
      }
    }
  }
  return m;
}

struct SynthSpec {
  int n_images = 10;
  int positives_per_image = 1;
  int fp_per_positive = 1;
  int image_size = 16;
  fpbench::corpus::Split split = fpbench::corpus::Split::val;
  fpbench::corpus::DatasetTag tag = fpbench::corpus::DatasetTag::fp_refcocog;
};

struct SynthData {
  AnnotationStore store;
  std::vector<RefRecord> records;  // positives then false premises

  std::vector<RefRecord> positives() const {
    std::vector<RefRecord> out;
    for (const auto& r : records) {
      if (!r.is_false_premise) out.push_back(r);
    }
    return out;
  }
  std::vector<RefRecord> negatives() const {
    std::vector<RefRecord> out;
    for (const auto& r : records) {
      if (r.is_false_premise) out.push_back(r);
    }
    return out;
  }
};

// One rectangular annotation per image; sentences carry no sentence
// terminators so correction extraction stays exact end to end.
inline SynthData make_synthetic(const SynthSpec& spec = {}) {
  SynthData data;
  std::vector<fpbench::corpus::ImageInfo> images;
  std::vector<fpbench::corpus::Annotation> annotations;
  std::vector<fpbench::corpus::Category> categories{{1, "widget"}};
  std::vector<RefRecord> positives;
  std::vector<RefRecord> negatives;
  for (int i = 1; i <= spec.n_images; ++i) {
    images.push_back({i, "img" + std::to_string(i) + ".jpg", spec.image_size,
                      spec.image_size});
    const double x0 = 1 + (i % 4);
    const double y0 = 1 + (i % 5);
    const double w = 3 + (i % 4);
    const double h = 3 + (i % 3);
    fpbench::corpus::Annotation ann;
    ann.id = i;
    ann.image_id = i;
    ann.category_id = 1;
    ann.bbox = {x0, y0, w, h};
    ann.segmentation =
        PolygonSet{{x0, y0, x0 + w, y0, x0 + w, y0 + h, x0, y0 + h}};
    annotations.push_back(std::move(ann));
    for (int j = 1; j <= spec.positives_per_image; ++j) {
      RefRecord p;
      p.sent_id = "p" + std::to_string(i) + "_" + std::to_string(j);
      p.image_id = i;
      p.ann_id = i;
      p.split = spec.split;
      p.sentence = "the widget " + std::to_string(i) + " style " +
                   std::to_string(j);
      p.dataset_tag = spec.tag;
      for (int k = 1; k <= spec.fp_per_positive; ++k) {
        RefRecord f;
        f.sent_id = p.sent_id + "#fp" + std::to_string(k);
        f.image_id = i;
        f.ann_id = i;
        f.split = spec.split;
        f.sentence = "the gadget " + std::to_string(i) + " style " +
                     std::to_string(j) + " variant " + std::to_string(k);
        f.is_false_premise = true;
        f.source_sent_id = p.sent_id;
        f.correction = p.sentence;
        f.dataset_tag = spec.tag;
        negatives.push_back(std::move(f));
      }
      positives.push_back(std::move(p));
    }
  }
  data.store = AnnotationStore(std::move(images), std::move(annotations),
                               std::move(categories));
  data.records = positives;
  data.records.insert(data.records.end(), negatives.begin(), negatives.end());
  return data;
}

inline std::string coco_json(const SynthData& data) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  doc["categories"] = nlohmann::json::array();
  for (const auto& [id, im] : data.store.images()) {
    doc["images"].push_back({{"id", im.id},
                             {"file_name", im.file_name},
                             {"height", im.height},
                             {"width", im.width}});
  }
  for (const auto& [id, ann] : data.store.annotations()) {
    nlohmann::json j{{"id", ann.id},
                     {"image_id", ann.image_id},
                     {"category_id", ann.category_id},
                     {"bbox", ann.bbox}};
    const auto& polys = std::get<PolygonSet>(ann.segmentation);
    j["segmentation"] = polys;
    doc["annotations"].push_back(std::move(j));
  }
  for (const auto& [id, cat] : data.store.categories()) {
    doc["categories"].push_back({{"id", cat.id}, {"name", cat.name}});
  }
  return doc.dump();
}

class TempDir {
 public:
  explicit TempDir(const std::string& stem = "fpbench_test") {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    path_ = base / (stem + "_" + std::to_string(rd()) + "_" +
                    std::to_string(::getpid()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Minimal configurable endpoint for tests that need stateful behavior
/// (retry sequences, canned judge output).
class FnEndpoint : public fpbench::modelio::Endpoint {
 public:
  using ChatFn = std::function<std::string(const fpbench::modelio::ChatRequest&)>;
  using SegFn = std::function<fpbench::modelio::SegResponse(
      const std::string&, const std::string&)>;

  FnEndpoint(fpbench::modelio::Capability cap, ChatFn chat_fn, SegFn seg_fn = {})
      : Endpoint(make_config(cap)),
        chat_fn_(std::move(chat_fn)),
        seg_fn_(std::move(seg_fn)) {}

  fpbench::modelio::ChatResponse chat(
      const fpbench::modelio::ChatRequest& req) override {
    fpbench::modelio::ChatResponse out;
    out.text = chat_fn_(req);
    return out;
  }
  fpbench::modelio::SegResponse segment(const std::string& q,
                                        const std::string& ref) override {
    return seg_fn_(q, ref);
  }
  fpbench::modelio::SegResponse unified(const std::string& q,
                                        const std::string& ref) override {
    return seg_fn_(q, ref);
  }

 private:
  static fpbench::modelio::EndpointConfig make_config(
      fpbench::modelio::Capability cap) {
    fpbench::modelio::EndpointConfig c;
    c.name = "test-fn";
    c.base_url = "mock://scripted";
    c.capability = cap;
    return c;
  }
  ChatFn chat_fn_;
  SegFn seg_fn_;
};

inline fpbench::modelio::EndpointConfig mock_config(
    const std::string& name, const std::string& kind,
    fpbench::modelio::Capability cap) {
  fpbench::modelio::EndpointConfig c;
  c.name = name;
  c.base_url = "mock://" + kind;
  c.capability = cap;
  return c;
}

}  // namespace fptest
