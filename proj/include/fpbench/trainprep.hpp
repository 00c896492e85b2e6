#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fpbench/augment.hpp"
#include "fpbench/corpus.hpp"

namespace fpbench::trainprep {

using PoolItem = std::variant<corpus::RefRecord, augment::QaRecord>;
using Pools = std::map<std::string, std::vector<PoolItem>>;

struct MixSpec {
  /// Pool key -> sampling weight. The default mirrors the unified training
  /// mix: fp : vqa : rrefcoco = 7 : 2 : 1.
  std::map<std::string, double> source_weights = {
      {"fp", 7.0}, {"vqa", 2.0}, {"rrefcoco", 1.0}};
  /// True:false balance applied inside fp-refcoco-family pools after the
  /// source draw.
  std::pair<int, int> tp_fp_ratio = {9, 1};
  std::int64_t total_examples = 0;
  std::uint64_t seed = 0;
};

struct ConvTurn {
  std::string role;  // user | assistant
  std::string text;
  std::optional<std::string> image_ref;
  std::optional<std::string> mask_ref;
};

struct ManifestEntry {
  std::string source_tag;  // pool key
  std::string id;          // sent_id or qa_id
  std::string kind;        // positive | false-premise | qa
  std::vector<ConvTurn> conversation;

  nlohmann::json to_json() const;
  static ManifestEntry from_json(const nlohmann::json& j);
};

/// Seeded categorical sampling with replacement over the weighted pools,
/// one counter-derived RNG per output index so generation is
/// order-deterministic. Positive entries end in a segmentation-affirming
/// assistant turn with a mask_ref; false-premise entries end in a
/// rejection, with the correction suggested only when the record carries
/// one.
std::vector<ManifestEntry> build_training_manifest(const Pools& pools,
                                                   const MixSpec& spec);

struct ManifestStats {
  std::int64_t total = 0;
  std::map<std::string, std::int64_t> per_source;
  std::map<std::string, double> source_fraction;
  // Referring-record entries only (vqa conversations are neither).
  std::map<std::string, std::int64_t> tp_per_source;
  std::map<std::string, std::int64_t> fp_per_source;

  nlohmann::json to_json() const;
};

ManifestStats manifest_stats(const std::vector<ManifestEntry>& manifest);

std::vector<ManifestEntry> load_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& manifest);

}  // namespace fpbench::trainprep
