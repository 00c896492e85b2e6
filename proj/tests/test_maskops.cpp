#include "fpbench/maskops.hpp"

#include <doctest.h>

#include <random>

#include "fpbench/errors.hpp"
#include "helpers.hpp"

using namespace fpbench;
using namespace fpbench::maskops;

namespace {

// Pixel-loop reference for cumulative IoU.
std::pair<std::int64_t, std::int64_t> brute_inter_union(
    const std::optional<BitMask>& pred, const std::optional<BitMask>& gt) {
  std::int64_t inter = 0, uni = 0;
  const BitMask* a = pred ? &*pred : nullptr;
  const BitMask* b = gt ? &*gt : nullptr;
  const int h = a ? a->height() : (b ? b->height() : 0);
  const int w = a ? a->width() : (b ? b->width() : 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const bool pa = a && a->get(r, c);
      const bool pb = b && b->get(r, c);
      if (pa && pb) ++inter;
      if (pa || pb) ++uni;
    }
  }
  return {inter, uni};
}

Polygon random_polygon(std::mt19937_64& rng, int n_vertices, double extent) {
  std::uniform_real_distribution<double> u(0.0, extent);
  Polygon poly;
  for (int i = 0; i < n_vertices; ++i) {
    poly.push_back(u(rng));
    poly.push_back(u(rng));
  }
  return poly;
}

}  // namespace

TEST_CASE("ciou identity and degenerate cases") {
  std::mt19937_64 rng(7);
  auto gt = fptest::random_mask(rng, 10, 10, 0.5);
  while (gt.count() != 50) gt = fptest::random_mask(rng, 10, 10, 0.5);

  CiouAccumulator acc;
  acc.add(gt, gt);
  CHECK(acc.intersection_px == 50);
  CHECK(acc.union_px == 50);
  CHECK(acc.finalize() == doctest::Approx(1.0));

  CiouAccumulator rejected;  // correct false-premise rejection
  rejected.add(std::nullopt, std::nullopt);
  CHECK(rejected.intersection_px == 0);
  CHECK(rejected.union_px == 0);
  CHECK(rejected.finalize() == 1.0);

  BitMask pred(10, 10);
  for (int c = 0; c < 10; ++c) {
    for (int r = 0; r < 10; ++r) pred.set(r, c);
  }
  CiouAccumulator miss;
  miss.add(pred, std::nullopt);  // hallucinated mask on a false premise
  CHECK(miss.intersection_px == 0);
  CHECK(miss.union_px == 100);
  CHECK(miss.finalize() == 0.0);
}

TEST_CASE("ciou shape mismatch") {
  BitMask a(4, 4), b(4, 5);
  CiouAccumulator acc;
  CHECK_THROWS_AS(acc.add(a, b), ShapeError);
}

TEST_CASE("ciou matches pixel-loop oracle on a mixed batch") {
  std::mt19937_64 rng(123);
  CiouAccumulator acc;
  std::int64_t oracle_inter = 0, oracle_union = 0;
  for (int i = 0; i < 20; ++i) {
    std::optional<BitMask> pred, gt;
    if (i % 5 != 0) pred = fptest::random_mask(rng, 16, 16, 0.4);
    if (i % 7 != 0) gt = fptest::random_mask(rng, 16, 16, 0.4);
    acc.add(pred, gt);
    auto [di, du] = brute_inter_union(pred, gt);
    oracle_inter += di;
    oracle_union += du;
  }
  CHECK(acc.intersection_px == oracle_inter);
  CHECK(acc.union_px == oracle_union);
  CHECK(acc.finalize() ==
        static_cast<double>(oracle_inter) / static_cast<double>(oracle_union));
}

TEST_CASE("ciou accumulation is order independent and mergeable") {
  std::mt19937_64 rng(5);
  std::vector<std::pair<std::optional<BitMask>, std::optional<BitMask>>> batch;
  for (int i = 0; i < 30; ++i) {
    batch.emplace_back(fptest::random_mask(rng, 8, 8, 0.3),
                       fptest::random_mask(rng, 8, 8, 0.3));
  }
  CiouAccumulator forward;
  for (const auto& [p, g] : batch) forward.add(p, g);

  CiouAccumulator backward;
  for (auto it = batch.rbegin(); it != batch.rend(); ++it) {
    backward.add(it->first, it->second);
  }
  CHECK(forward.intersection_px == backward.intersection_px);
  CHECK(forward.union_px == backward.union_px);

  CiouAccumulator left, right;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    (i < 15 ? left : right).add(batch[i].first, batch[i].second);
  }
  left.merge(right);
  CHECK(left.intersection_px == forward.intersection_px);
  CHECK(left.union_px == forward.union_px);
}

TEST_CASE("false premise contributions move the score one way only") {
  std::mt19937_64 rng(77);
  CiouAccumulator acc;
  acc.add(fptest::random_mask(rng, 8, 8, 0.6), fptest::random_mask(rng, 8, 8, 0.6));
  const double before = acc.finalize();

  CiouAccumulator with_rejection = acc;
  with_rejection.add(std::nullopt, std::nullopt);
  CHECK(with_rejection.finalize() == before);

  auto hallucinated = fptest::random_mask(rng, 8, 8, 0.5);
  while (hallucinated.count() == 0) hallucinated = fptest::random_mask(rng, 8, 8, 0.5);
  CiouAccumulator with_mask = acc;
  with_mask.add(hallucinated, std::nullopt);
  CHECK(with_mask.finalize() < before);
}

TEST_CASE("rle canonical examples") {
  BitMask zeros(3, 3);
  auto rle0 = rle_encode(zeros);
  CHECK(rle0.counts == std::vector<std::int64_t>{9});

  BitMask ones(3, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) ones.set(r, c);
  }
  auto rle1 = rle_encode(ones);
  CHECK(rle1.counts == std::vector<std::int64_t>{0, 9});

  CHECK(rle_decode(rle0) == zeros);
  CHECK(rle_decode(rle1) == ones);
}

TEST_CASE("rle column-major order") {
  // 2x3 mask with only pixel (r=1, c=0) set: column-major index 1.
  BitMask m(2, 3);
  m.set(1, 0);
  auto rle = rle_encode(m);
  CHECK(rle.counts == std::vector<std::int64_t>{1, 1, 4});
}

TEST_CASE("rle decode-encode identity on random masks") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<double> dens(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    auto mask = fptest::random_mask(rng, dim(rng), dim(rng), dens(rng));
    auto rle = rle_encode(mask);
    auto back = rle_decode(rle);
    REQUIRE(back == mask);
    REQUIRE(rle_encode(back) == rle);  // canonical form is unique
  }
}

TEST_CASE("rle rejects corrupt input") {
  RleMask bad;
  bad.height = 3;
  bad.width = 3;
  bad.counts = {4};  // sums to 4, not 9
  CHECK_THROWS_AS(rle_decode(bad), CorruptRle);

  RleMask zero_run;
  zero_run.height = 2;
  zero_run.width = 2;
  zero_run.counts = {2, 0, 2};
  CHECK_THROWS_AS(rle_decode(zero_run), CorruptRle);

  RleMask neg;
  neg.height = 2;
  neg.width = 2;
  neg.counts = {-1, 5};
  CHECK_THROWS_AS(rle_decode(neg), CorruptRle);

  CHECK_THROWS_AS(
      RleMask::from_json(nlohmann::json{{"size", {2, 2}}, {"counts", "a0b"}}),
      CorruptRle);
}

TEST_CASE("rle json round trip") {
  std::mt19937_64 rng(9);
  auto mask = fptest::random_mask(rng, 12, 7, 0.4);
  auto rle = rle_encode(mask);
  auto back = RleMask::from_json(rle.to_json());
  CHECK(back == rle);
}

TEST_CASE("rectangle rasterization covers exactly the enclosed centers") {
  // Covers pixel centers (0.5..1.5) x (0.5..1.5): a 2x2 block.
  PolygonSet rect{{0.3, 0.3, 1.8, 0.3, 1.8, 1.8, 0.3, 1.8}};
  auto mask = rasterize_polygons(rect, 4, 4);
  CHECK(mask.count() == 4);
  CHECK(mask.get(0, 0));
  CHECK(mask.get(0, 1));
  CHECK(mask.get(1, 0));
  CHECK(mask.get(1, 1));
}

TEST_CASE("degenerate polygon rasterizes to nothing") {
  PolygonSet line{{1.0, 1.0, 5.0, 5.0, 9.0, 9.0}};
  CHECK(rasterize_polygons(line, 12, 12).count() == 0);
}

TEST_CASE("polygon validation") {
  CHECK_THROWS_AS(rasterize_polygons({{0.0, 0.0, 1.0, 1.0}}, 4, 4),
                  InvalidGeometry);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rasterize_polygons({{0.0, 0.0, 1.0, inf, 2.0, 0.0}}, 4, 4),
                  InvalidGeometry);
}

TEST_CASE("random octagons match the point-in-polygon oracle exactly") {
  std::mt19937_64 rng(31337);
  for (int i = 0; i < 100; ++i) {
    PolygonSet polys{random_polygon(rng, 8, 32.0)};
    if (i % 3 == 0) polys.push_back(random_polygon(rng, 5, 32.0));
    auto fast = rasterize_polygons(polys, 32, 32);
    auto slow = fptest::rasterize_oracle(polys, 32, 32);
    REQUIRE(fast == slow);
  }
}
