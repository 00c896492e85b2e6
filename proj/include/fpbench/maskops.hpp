#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

namespace fpbench::maskops {

/// Row-major binary mask. Values are 0/1 bytes.
class BitMask {
 public:
  BitMask(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }

  bool get(int r, int c) const { return bits_[idx(r, c)] != 0; }
  void set(int r, int c, bool v = true) {
    bits_[idx(r, c)] = v ? 1 : 0;
  }

  std::int64_t count() const;

  const std::vector<std::uint8_t>& data() const { return bits_; }
  std::vector<std::uint8_t>& data() { return bits_; }

  bool operator==(const BitMask&) const = default;

 private:
  std::size_t idx(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(c);
  }

  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

/// COCO-style uncompressed run-length encoding: column-major pixel order,
/// alternating run lengths starting with the zero-run (which may be 0).
/// Canonical form has no other zero-length runs and no trailing empty run,
/// so each mask has exactly one encoding.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;

  nlohmann::json to_json() const;
  static RleMask from_json(const nlohmann::json& j);

  bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const BitMask& mask);
BitMask rle_decode(const RleMask& rle);

/// One polygon as a flat [x1,y1,x2,y2,...] list; a set of polygons is OR-ed.
using Polygon = std::vector<double>;
using PolygonSet = std::vector<Polygon>;

/// Scanline fill with the pixel-center rule: pixel (r,c) is set iff the
/// point (c+0.5, r+0.5) is inside the polygon union under the even-odd
/// rule. Bit-exact against a per-pixel ray-cast with the same crossing
/// arithmetic.
BitMask rasterize_polygons(const PolygonSet& polygons, int height, int width);

/// Cumulative-IoU state. Absent masks count as all-zeros, so a false
/// premise query contributes only what the predictor wrongly segments.
/// Merges are component-wise, which makes evaluation shardable.
struct CiouAccumulator {
  std::int64_t intersection_px = 0;
  std::int64_t union_px = 0;

  void add(const std::optional<BitMask>& pred, const std::optional<BitMask>& gt);
  void merge(const CiouAccumulator& other);

  /// intersection/union; an empty accumulator (all queries correctly
  /// rejected) scores 1.0.
  double finalize() const;
};

}  // namespace fpbench::maskops
