#include "fpbench/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpbench/errors.hpp"

namespace fpbench::maskops {

BitMask::BitMask(int height, int width) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw InvalidInput("mask dimensions must be positive, got " +
                       std::to_string(height) + "x" + std::to_string(width));
  }
  bits_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
}

std::int64_t BitMask::count() const {
  return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
}

nlohmann::json RleMask::to_json() const {
  return nlohmann::json{{"size", {height, width}}, {"counts", counts}};
}

RleMask RleMask::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
    throw CorruptRle("RLE object must have 'size' and 'counts'");
  }
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2) {
    throw CorruptRle("RLE 'size' must be [height, width]");
  }
  if (j.at("counts").is_string()) {
    throw CorruptRle("compressed RLE strings are not supported; "
                     "convert to uncompressed integer counts upstream");
  }
  RleMask rle;
  rle.height = size.at(0).get<int>();
  rle.width = size.at(1).get<int>();
  rle.counts = j.at("counts").get<std::vector<std::int64_t>>();
  return rle;
}

RleMask rle_encode(const BitMask& mask) {
  RleMask rle;
  rle.height = mask.height();
  rle.width = mask.width();
  const int h = mask.height();
  const int w = mask.width();
  std::uint8_t cur = 0;  // runs alternate starting from zeros
  std::int64_t run = 0;
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) {
      std::uint8_t v = mask.get(r, c) ? 1 : 0;
      if (v == cur) {
        ++run;
      } else {
        rle.counts.push_back(run);
        cur = v;
        run = 1;
      }
    }
  }
  rle.counts.push_back(run);
  return rle;
}

BitMask rle_decode(const RleMask& rle) {
  if (rle.height <= 0 || rle.width <= 0) {
    throw CorruptRle("RLE size must be positive, got " +
                     std::to_string(rle.height) + "x" +
                     std::to_string(rle.width));
  }
  std::int64_t total = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    std::int64_t c = rle.counts[i];
    if (c < 0) throw CorruptRle("negative run length");
    if (c == 0 && i != 0) {
      throw CorruptRle("zero-length run at position " + std::to_string(i) +
                       " (only a leading zero-run may be empty)");
    }
    total += c;
  }
  const std::int64_t expected =
      static_cast<std::int64_t>(rle.height) * rle.width;
  if (total != expected) {
    throw CorruptRle("run lengths sum to " + std::to_string(total) +
                     ", expected " + std::to_string(expected));
  }
  BitMask mask(rle.height, rle.width);
  std::int64_t pos = 0;
  std::uint8_t val = 0;
  for (std::int64_t c : rle.counts) {
    if (val) {
      for (std::int64_t k = 0; k < c; ++k) {
        std::int64_t p = pos + k;
        mask.set(static_cast<int>(p % rle.height),
                 static_cast<int>(p / rle.height));
      }
    }
    pos += c;
    val ^= 1;
  }
  return mask;
}

namespace {

void validate_polygon(const Polygon& poly) {
  if (poly.size() < 6 || poly.size() % 2 != 0) {
    throw InvalidGeometry("polygon needs at least 3 (x,y) vertices, got " +
                          std::to_string(poly.size()) + " coordinates");
  }
  for (double v : poly) {
    if (!std::isfinite(v)) throw InvalidGeometry("non-finite polygon coordinate");
  }
}

}  // namespace

BitMask rasterize_polygons(const PolygonSet& polygons, int height, int width) {
  for (const auto& poly : polygons) validate_polygon(poly);
  BitMask mask(height, width);
  std::vector<double> xs;
  for (const auto& poly : polygons) {
    const std::size_t n = poly.size() / 2;
    for (int r = 0; r < height; ++r) {
      const double cy = r + 0.5;
      xs.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double yi = poly[2 * i + 1];
        const double yj = poly[2 * j + 1];
        if ((yi > cy) != (yj > cy)) {
          const double xi = poly[2 * i];
          const double xj = poly[2 * j];
          xs.push_back((xj - xi) * (cy - yi) / (yj - yi) + xi);
        }
      }
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end());
      // Pixel center is inside iff an odd number of crossings lie strictly
      // to its right; sweep the sorted crossings once per row.
      std::size_t k = 0;
      for (int c = 0; c < width; ++c) {
        const double cx = c + 0.5;
        while (k < xs.size() && xs[k] <= cx) ++k;
        if ((xs.size() - k) & 1) mask.set(r, c);
      }
    }
  }
  return mask;
}

void CiouAccumulator::add(const std::optional<BitMask>& pred,
                          const std::optional<BitMask>& gt) {
  if (pred && gt) {
    if (pred->height() != gt->height() || pred->width() != gt->width()) {
      throw ShapeError("mask shape mismatch: pred " +
                       std::to_string(pred->height()) + "x" +
                       std::to_string(pred->width()) + " vs gt " +
                       std::to_string(gt->height()) + "x" +
                       std::to_string(gt->width()));
    }
    const auto& a = pred->data();
    const auto& b = gt->data();
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      inter += a[i] & b[i];
      uni += a[i] | b[i];
    }
    intersection_px += inter;
    union_px += uni;
  } else if (pred) {
    union_px += pred->count();
  } else if (gt) {
    union_px += gt->count();
  }
}

void CiouAccumulator::merge(const CiouAccumulator& other) {
  intersection_px += other.intersection_px;
  union_px += other.union_px;
}

double CiouAccumulator::finalize() const {
  if (union_px == 0) return 1.0;
  return static_cast<double>(intersection_px) / static_cast<double>(union_px);
}

}  // namespace fpbench::maskops
