#include "fpbench/pipelines.hpp"

#include <doctest.h>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"
#include "helpers.hpp"

using namespace fpbench;
using namespace fpbench::pipelines;
using fpbench::modelio::Capability;
using fpbench::modelio::make_endpoint;

TEST_CASE("presence routing follows the denial prefix rule") {
  auto absent = classify_presence(
      "No, there is no green car in the image. Did you mean the red car in "
      "front of the man?");
  CHECK(absent.first == Verdict::absent);
  CHECK(absent.second == "the red car in front of the man");

  auto present = classify_presence(
      "Yes, the green car behind the man is present in the image.");
  CHECK(present.first == Verdict::present);
  CHECK(!present.second.has_value());

  auto bare = classify_presence("No, there is no bookcase here.");
  CHECK(bare.first == Verdict::absent);
  CHECK(!bare.second.has_value());
}

TEST_CASE("presence routing is total and byte-level") {
  CHECK(classify_presence("").first == Verdict::present);
  CHECK(classify_presence("   \t\nNo, there is no cat.").first == Verdict::absent);
  CHECK(classify_presence("NO, THERE IS NO CAT!").first == Verdict::absent);
  // Softer denials deliberately count as present.
  CHECK(classify_presence("I don't see a cat anywhere.").first ==
        Verdict::present);
  CHECK(classify_presence("No there is no cat.").first == Verdict::present);
  CHECK(classify_presence("There is no cat.").first == Verdict::present);
  // Prefix semantics: "no, there is not..." begins with the denial prefix.
  CHECK(classify_presence("No, there is nothing there.").first ==
        Verdict::absent);
  // No terminator at all: denial without correction.
  auto open_ended = classify_presence("no, there is no cat");
  CHECK(open_ended.first == Verdict::absent);
  CHECK(!open_ended.second.has_value());
  // Correction without the "did you mean" lead-in survives.
  auto plain = classify_presence("No, there is no cat. the dog on the mat");
  CHECK(plain.second == "the dog on the mat");
  // Idempotence over its own outputs: classifying a correction never throws.
  classify_presence(*plain.second);
}

TEST_CASE("see-say prompt carries the guideline text and the expression") {
  auto req = build_see_say_prompt("a green car behind the man", "img.jpg");
  REQUIRE(req.messages.size() == 1);
  const auto& text = req.messages[0].text;
  CHECK(text.find("If not, deny the existence of the object") !=
        std::string::npos);
  CHECK(text.find("\"Is there a green car behind the man in the image?\"") !=
        std::string::npos);
  CHECK(req.messages[0].image_ref == "img.jpg");

  CHECK_THROWS_AS(build_see_say_prompt("   ", "img.jpg"), InvalidInput);

  auto quoted = build_see_say_prompt("a \"quoted\" thing", "img.jpg");
  auto back = prompts::extract_see_say_expression(quoted.messages[0].text);
  CHECK(back == "a \"quoted\" thing");
}

namespace {

struct Harness {
  fptest::SynthData data;
  std::shared_ptr<modelio::RunLedger> chat_ledger;
  std::shared_ptr<modelio::RunLedger> seg_ledger;
  modelio::MockGroundTruth gt;
  std::unique_ptr<modelio::Endpoint> oracle_chat;
  std::unique_ptr<modelio::Endpoint> oracle_seg;
  std::unique_ptr<modelio::Endpoint> oracle_unified;
  std::unique_ptr<modelio::Endpoint> always_yes;
  std::unique_ptr<modelio::Endpoint> always_seg;
  fptest::TempDir dir;

  explicit Harness(fptest::SynthSpec spec = {.n_images = 4}) {
    data = fptest::make_synthetic(spec);
    chat_ledger = std::make_shared<modelio::RunLedger>(dir.file("chat.jsonl"));
    seg_ledger = std::make_shared<modelio::RunLedger>(dir.file("seg.jsonl"));
    gt = modelio::MockGroundTruth::from_records(data.records, data.store);
    oracle_chat = make_endpoint(
        fptest::mock_config("oc", "oracle", Capability::chat), chat_ledger, &gt);
    oracle_seg = make_endpoint(
        fptest::mock_config("os", "oracle", Capability::segment), seg_ledger, &gt);
    oracle_unified = make_endpoint(
        fptest::mock_config("ou", "oracle", Capability::unified), nullptr, &gt);
    always_yes = make_endpoint(
        fptest::mock_config("ay", "always-yes", Capability::chat), nullptr, &gt);
    always_seg = make_endpoint(
        fptest::mock_config("as", "always-segment", Capability::segment),
        seg_ledger, &gt);
  }

  std::string ref(std::int64_t image_id) const {
    return data.store.image_ref(image_id);
  }
};

}  // namespace

TEST_CASE("cascade routes present records into stage 2") {
  Harness h;
  const auto& tp = h.data.positives()[0];
  auto p = run_cascade(tp, h.ref(tp.image_id), *h.oracle_chat, *h.oracle_seg);
  CHECK(p.verdict == Verdict::present);
  CHECK(p.protocol == Protocol::cascade);
  REQUIRE(p.mask.has_value());
  CHECK(maskops::rle_decode(*p.mask) == h.data.store.annotation_mask(tp.ann_id));
  CHECK(p.transcript_stage2.has_value());
}

TEST_CASE("cascade skips stage 2 on denials") {
  Harness h;
  const auto before = h.seg_ledger->entries();
  const auto& fp = h.data.negatives()[0];
  auto p = run_cascade(fp, h.ref(fp.image_id), *h.oracle_chat, *h.oracle_seg);
  CHECK(p.verdict == Verdict::absent);
  CHECK(p.correction == fp.correction);
  CHECK(!p.mask.has_value());
  CHECK(!p.transcript_stage2.has_value());
  CHECK(h.seg_ledger->entries() == before);  // no stage-2 call
}

TEST_CASE("always-yes plus always-segment reproduces the hallucination failure") {
  Harness h;
  const auto& fp = h.data.negatives()[0];
  auto p = run_cascade(fp, h.ref(fp.image_id), *h.always_yes, *h.always_seg);
  CHECK(p.verdict == Verdict::present);
  REQUIRE(p.mask.has_value());
  CHECK(maskops::rle_decode(*p.mask).count() > 0);
}

TEST_CASE("unified answers both axes in one call") {
  Harness h;
  const auto& tp = h.data.positives()[0];
  auto p = run_unified(tp, h.ref(tp.image_id), *h.oracle_unified);
  CHECK(p.verdict == Verdict::present);
  REQUIRE(p.mask.has_value());

  const auto& fp = h.data.negatives()[0];
  auto q = run_unified(fp, h.ref(fp.image_id), *h.oracle_unified);
  CHECK(q.verdict == Verdict::absent);
  CHECK(q.correction == fp.correction);
  CHECK(!q.mask.has_value());
  CHECK(q.flags.empty());
}

TEST_CASE("unified contradictions keep the mask and get flagged") {
  Harness h;
  const auto& fp = h.data.negatives()[0];
  fptest::FnEndpoint scripted(
      Capability::unified, {},
      [&](const std::string&, const std::string&) {
        modelio::SegResponse r;
        r.transcript = "No, there is no such thing in the image.";
        r.mask = maskops::rle_encode(h.data.store.annotation_mask(fp.ann_id));
        return r;
      });
  auto p = run_unified(fp, h.ref(fp.image_id), scripted);
  CHECK(p.verdict == Verdict::absent);
  CHECK(p.mask.has_value());
  REQUIRE(p.flags.size() == 1);
  CHECK(p.flags[0] == "contradiction");
}

TEST_CASE("baseline always claims presence and always segments") {
  Harness h;
  const auto& fp = h.data.negatives()[0];
  auto p = run_baseline(fp, h.ref(fp.image_id), *h.always_seg);
  CHECK(p.verdict == Verdict::present);
  CHECK(p.mask.has_value());

  const auto& tp = h.data.positives()[0];
  auto q = run_baseline(tp, h.ref(tp.image_id), *h.oracle_seg);
  REQUIRE(q.mask.has_value());
  CHECK(maskops::rle_decode(*q.mask) == h.data.store.annotation_mask(tp.ann_id));
}

TEST_CASE("stage-2 call count equals the present count") {
  Harness h({.n_images = 6});
  auto records = h.data.records;
  auto ref_fn = [&](std::int64_t id) { return h.ref(id); };
  auto preds = run_protocol(Protocol::cascade, records, ref_fn,
                            h.oracle_chat.get(), h.oracle_seg.get(), {.concurrency = 3});
  std::int64_t n_present = 0;
  for (const auto& p : preds) {
    if (p.verdict == Verdict::present) ++n_present;
  }
  CHECK(h.seg_ledger->entries() == n_present);
  CHECK(n_present == 6);  // oracle confirms exactly the positives
}

TEST_CASE("empty record lists produce empty prediction lists") {
  Harness h;
  auto ref_fn = [&](std::int64_t id) { return h.ref(id); };
  auto preds = run_protocol(Protocol::baseline, {}, ref_fn, nullptr,
                            h.oracle_seg.get(), {});
  CHECK(preds.empty());
}

TEST_CASE("concurrent runs preserve input order and agree with sequential") {
  Harness h({.n_images = 10});
  auto ref_fn = [&](std::int64_t id) { return h.ref(id); };
  auto sequential = run_protocol(Protocol::cascade, h.data.records, ref_fn,
                                 h.oracle_chat.get(), h.oracle_seg.get(),
                                 {.concurrency = 1});
  auto parallel = run_protocol(Protocol::cascade, h.data.records, ref_fn,
                               h.oracle_chat.get(), h.oracle_seg.get(),
                               {.concurrency = 8});
  REQUIRE(sequential.size() == parallel.size());
  for (std::size_t i = 0; i < sequential.size(); ++i) {
    CHECK(sequential[i].sent_id == h.data.records[i].sent_id);
    CHECK(sequential[i].to_json() == parallel[i].to_json());
  }
}

TEST_CASE("upstream failures carry a stage tag") {
  Harness h;
  fptest::FnEndpoint failing_chat(
      Capability::chat, [](const modelio::ChatRequest&) -> std::string {
        throw UpstreamError(500, 3, "kaput");
      });
  const auto& tp = h.data.positives()[0];
  try {
    run_cascade(tp, h.ref(tp.image_id), failing_chat, *h.oracle_seg);
    FAIL("expected UpstreamError");
  } catch (const UpstreamError& e) {
    CHECK(std::string(e.what()).rfind("stage1:", 0) == 0);
  }
}

TEST_CASE("predictions round trip through jsonl") {
  Harness h;
  auto ref_fn = [&](std::int64_t id) { return h.ref(id); };
  auto preds = run_protocol(Protocol::cascade, h.data.records, ref_fn,
                            h.oracle_chat.get(), h.oracle_seg.get(), {});
  fptest::TempDir dir;
  write_predictions(dir.file("p.jsonl"), preds);
  auto loaded = load_predictions(dir.file("p.jsonl"));
  REQUIRE(loaded.size() == preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(loaded[i].to_json() == preds[i].to_json());
  }
  write_predictions(dir.file("q.jsonl"), loaded);
  CHECK(read_file(dir.file("p.jsonl")) == read_file(dir.file("q.jsonl")));
}
