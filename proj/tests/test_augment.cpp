#include "fpbench/augment.hpp"

#include <doctest.h>

#include <map>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"
#include "helpers.hpp"

using namespace fpbench;
using namespace fpbench::augment;
using fptest::FnEndpoint;

TEST_CASE("fp prompt ends at the completion anchor") {
  auto prompt = build_fp_prompt({"the vase on the right"});
  const std::string tail = "Original: [\"the vase on the right\"]\nAltered:";
  REQUIRE(prompt.size() >= tail.size());
  CHECK(prompt.substr(prompt.size() - tail.size()) == tail);
}

TEST_CASE("fp prompt carries all three in-context examples") {
  std::vector<std::string> example3 = {
      "the vase on the right",
      "a woman wearing a blue shirt",
      "a woman in a grey blue sweatshirt painting a figure onto a vase",
      "man on right",
      "man in red shirt",
      "a large brown urn being decorated by a woman",
      "a large urn on a green table and the lady is drawing on it"};
  auto prompt = build_fp_prompt(example3);
  const auto last_original = prompt.rfind("Original: ");
  CHECK(prompt.find("## Example 1:") < last_original);
  CHECK(prompt.find("## Example 2:") < last_original);
  CHECK(prompt.find("## Example 3:") < last_original);
  CHECK(prompt.find("Change only one word in each sentence.") != std::string::npos);
}

TEST_CASE("fp prompt escapes quotes and round trips through the extractor") {
  std::vector<std::string> sentences = {"the \"quoted\" vase", "a back\\slash"};
  auto prompt = build_fp_prompt(sentences);
  auto extracted = prompts::extract_fp_original_list(prompt);
  REQUIRE(extracted.has_value());
  CHECK(*extracted == sentences);
}

TEST_CASE("fp prompt input contract") {
  CHECK_THROWS_AS(build_fp_prompt({}), InvalidInput);
  CHECK_THROWS_AS(build_fp_prompt(std::vector<std::string>(26, "s")), InvalidInput);
}

TEST_CASE("fp response parsing") {
  SUBCASE("plain list") {
    auto out = parse_fp_response(
        "Altered: [\"the yellow ball to the left of the blue toy.\"]", 1);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == "the yellow ball to the left of the blue toy.");
  }
  SUBCASE("trailing reasoning is ignored") {
    auto out = parse_fp_response(
        "Altered: [\"a\", \"b\"]\nReasoning: Changes focus on the main subject.",
        2);
    CHECK(out == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("case-insensitive keyword with leading whitespace") {
    auto out = parse_fp_response("  altered:   [\"x\"]", 1);
    CHECK(out == std::vector<std::string>{"x"});
  }
  SUBCASE("length mismatch") {
    try {
      parse_fp_response("Altered: [\"a\", \"b\"]", 3);
      FAIL("expected LengthMismatch");
    } catch (const LengthMismatch& e) {
      CHECK(e.n_found == 2);
      CHECK(e.n_expected == 3);
    }
  }
  SUBCASE("no list") {
    CHECK_THROWS_AS(parse_fp_response("no list here", 1), ParseError);
    CHECK_THROWS_AS(parse_fp_response("Altered: nothing", 1), ParseError);
  }
  SUBCASE("brackets inside strings do not confuse the scanner") {
    auto out = parse_fp_response("Altered: [\"a [SEG] token\"]", 1);
    CHECK(out[0] == "a [SEG] token");
  }
}

namespace {

corpus::RefRecord positive(const std::string& id, std::int64_t image,
                           const std::string& sentence) {
  corpus::RefRecord r;
  r.sent_id = id;
  r.image_id = image;
  r.ann_id = image;
  r.split = corpus::Split::train;
  r.sentence = sentence;
  r.dataset_tag = corpus::DatasetTag::fp_refcoco;
  return r;
}

}  // namespace

TEST_CASE("generation binds altered sentences positionally") {
  auto positives = std::vector<corpus::RefRecord>{
      positive("p1", 1, "a cat on the chair")};
  FnEndpoint llm(modelio::Capability::chat, [](const modelio::ChatRequest& req) {
    auto originals = prompts::extract_fp_original_list(req.messages.back().text);
    REQUIRE(originals.has_value());
    CHECK(*originals == std::vector<std::string>{"a cat on the chair"});
    return std::string("Altered: [\"a dog on the chair\"]");
  });
  auto fp = generate_fp_records(positives, llm, 1, {});
  REQUIRE(fp.size() == 1);
  CHECK(fp[0].sent_id == "p1#fp1");
  CHECK(fp[0].sentence == "a dog on the chair");
  CHECK(fp[0].correction == "a cat on the chair");
  CHECK(fp[0].source_sent_id == "p1");
  CHECK(fp[0].image_id == 1);
  CHECK(fp[0].is_false_premise);
  corpus::RefRecord merged[] = {positives[0], fp[0]};
  corpus::validate_records({merged[0], merged[1]});
}

TEST_CASE("unparseable responses are retried then produce records") {
  auto positives = std::vector<corpus::RefRecord>{positive("p1", 1, "a cat")};
  int calls = 0;
  FnEndpoint llm(modelio::Capability::chat,
                 [&calls](const modelio::ChatRequest&) -> std::string {
                   ++calls;
                   if (calls <= 2) return "garbage with no list";
                   return "Altered: [\"a dog\"]";
                 });
  GenerationReport report;
  auto fp = generate_fp_records(positives, llm, 1, {.max_retries = 2}, &report);
  REQUIRE(fp.size() == 1);
  CHECK(calls == 3);
  CHECK(report.retries == 2);
  CHECK(report.dropped_batches == 0);
}

TEST_CASE("batches over the retry budget are dropped, not fatal") {
  auto positives = std::vector<corpus::RefRecord>{
      positive("p1", 1, "a cat"), positive("p2", 2, "a dog")};
  FnEndpoint llm(modelio::Capability::chat,
                 [](const modelio::ChatRequest& req) -> std::string {
                   auto originals =
                       prompts::extract_fp_original_list(req.messages.back().text);
                   if ((*originals)[0] == "a cat") return "still not a list";
                   return "Altered: [\"a wolf\"]";
                 });
  GenerationReport report;
  auto fp = generate_fp_records(positives, llm, 1, {.max_retries = 1}, &report);
  REQUIRE(fp.size() == 1);
  CHECK(fp[0].source_sent_id == "p2");
  CHECK(report.dropped_batches == 1);
}

TEST_CASE("transport failures surface after the sweep finishes") {
  auto positives = std::vector<corpus::RefRecord>{
      positive("p1", 1, "a cat"), positive("p2", 2, "a dog")};
  FnEndpoint llm(modelio::Capability::chat,
                 [](const modelio::ChatRequest& req) -> std::string {
                   auto originals =
                       prompts::extract_fp_original_list(req.messages.back().text);
                   if ((*originals)[0] == "a cat") {
                     throw UpstreamError(503, 3, "unavailable");
                   }
                   return "Altered: [\"a wolf\"]";
                 });
  GenerationReport report;
  try {
    generate_fp_records(positives, llm, 1, {}, &report);
    FAIL("expected UpstreamError");
  } catch (const UpstreamError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
  CHECK(report.failed_image_ids == std::vector<std::int64_t>{1});
}

TEST_CASE("regeneration with a deterministic endpoint is byte identical") {
  auto data = fptest::make_synthetic({.n_images = 6, .positives_per_image = 2});
  auto positives = data.positives();
  auto augmenter_cfg = fptest::mock_config("aug", "augment-echo",
                                           modelio::Capability::chat);
  auto llm = modelio::make_endpoint(augmenter_cfg, nullptr, nullptr);
  auto a = generate_fp_records(positives, *llm, 7, {});
  auto b = generate_fp_records(positives, *llm, 7, {});
  REQUIRE(a.size() == positives.size());
  CHECK(a == b);
}

TEST_CASE("cleaning rules fire in order and report counts") {
  auto p1 = positive("p1", 1, "the red ball");
  auto p2 = positive("p2", 1, "the blue ball");
  std::vector<corpus::RefRecord> candidates;

  auto fp = [&](const std::string& id, const std::string& sentence,
                const corpus::RefRecord& src) {
    corpus::RefRecord r = src;
    r.sent_id = id;
    r.sentence = sentence;
    r.is_false_premise = true;
    r.source_sent_id = src.sent_id;
    r.correction = src.sentence;
    return r;
  };

  candidates.push_back(fp("p1#fp1", "The  Red ball", p1));   // (a) normalized match
  candidates.push_back(fp("p1#fp2", "the green ball", p1));  // survives
  candidates.push_back(fp("p2#fp1", "the green ball", p2));  // (b) duplicate
  candidates.push_back(fp("p2#fp2", "the blue ball", p1));   // hmm source p1, not identical
  candidates.push_back(fp("p2#fp3", "the purple ball", p2)); // survives

  CleanReport report;
  auto kept = clean_dataset(candidates, {p1, p2}, &report);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].sent_id == "p1#fp2");
  CHECK(kept[1].sent_id == "p2#fp3");
  CHECK(report.dropped_identical == 1);
  CHECK(report.dropped_duplicate == 1);
  CHECK(report.dropped_collides_positive == 1);  // "the blue ball" matches p2
  REQUIRE(report.entries.size() == 3);
  CHECK(report.entries[0].rule == "identical-to-source");
  CHECK(report.entries[1].rule == "duplicate");
  CHECK(report.entries[2].rule == "collides-positive");
}

TEST_CASE("cleaning never drops a compliant record") {
  std::mt19937_64 rng(4);
  std::vector<corpus::RefRecord> positives, candidates;
  for (int i = 0; i < 50; ++i) {
    auto p = positive("p" + std::to_string(i), i % 10,
                      "widget " + std::to_string(i));
    corpus::RefRecord c = p;
    c.sent_id = p.sent_id + "#fp1";
    c.sentence = "gadget " + std::to_string(i);
    c.is_false_premise = true;
    c.source_sent_id = p.sent_id;
    c.correction = p.sentence;
    positives.push_back(std::move(p));
    candidates.push_back(std::move(c));
  }
  CleanReport report;
  auto kept = clean_dataset(candidates, positives, &report);
  CHECK(kept.size() == candidates.size());
  CHECK(report.entries.empty());
}

TEST_CASE("cleaning matches a rule-by-rule reference filter on planted data") {
  std::mt19937_64 rng(21);
  std::vector<corpus::RefRecord> positives;
  for (int i = 0; i < 40; ++i) {
    positives.push_back(positive("p" + std::to_string(i), i % 8,
                                 "positive " + std::to_string(i)));
  }
  std::vector<corpus::RefRecord> candidates;
  for (int i = 0; i < 500; ++i) {
    const auto& src = positives[rng() % positives.size()];
    corpus::RefRecord c = src;
    c.sent_id = "c" + std::to_string(i);
    c.is_false_premise = true;
    c.source_sent_id = src.sent_id;
    c.correction = src.sentence;
    switch (rng() % 5) {
      case 0: c.sentence = " " + src.sentence + "  ";  break;  // rule (a)
      case 1: c.sentence = "dup " + std::to_string(src.image_id); break;
      case 2: c.sentence = positives[rng() % positives.size()].sentence; break;
      default: c.sentence = "fresh " + std::to_string(i); break;
    }
    candidates.push_back(std::move(c));
  }

  // Reference filter: literal restatement of the three rules.
  std::vector<std::string> expected;
  {
    std::map<std::int64_t, std::set<std::string>> kept_by_image;
    std::map<std::int64_t, std::set<std::string>> pos_by_image;
    for (const auto& p : positives) pos_by_image[p.image_id].insert(p.sentence);
    for (const auto& c : candidates) {
      if (normalize_sentence(c.sentence) == normalize_sentence(*c.correction)) {
        continue;
      }
      if (kept_by_image[c.image_id].count(c.sentence)) continue;
      if (pos_by_image[c.image_id].count(c.sentence)) continue;
      kept_by_image[c.image_id].insert(c.sentence);
      expected.push_back(c.sent_id);
    }
  }
  auto kept = clean_dataset(candidates, positives, nullptr);
  std::vector<std::string> got;
  for (const auto& r : kept) got.push_back(r.sent_id);
  CHECK(got == expected);
}

TEST_CASE("semantic false premises target only absent categories") {
  std::set<std::string> image{"cat", "chair"};
  std::set<std::string> all{"cat", "chair", "dog"};
  std::vector<FpTemplate> templates{
      {"Can you segment the {category} in this image?",
       "There is no {category} in this image."}};
  auto out = generate_semantic_fp(5, corpus::Split::train, image, all,
                                  templates, 3, 1);
  REQUIRE(out.size() == 1);
  CHECK(out[0].sentence == "Can you segment the dog in this image?");
  CHECK(out[0].dataset_tag == corpus::DatasetTag::semantic_fp);
  CHECK(out[0].is_false_premise);
  CHECK(!out[0].correction.has_value());
  CHECK(out[0].image_id == 5);

  CHECK_THROWS_AS(generate_semantic_fp(5, corpus::Split::train, image, all,
                                       templates, 3, 0),
                  InvalidInput);
  CHECK_THROWS_AS(generate_semantic_fp(5, corpus::Split::train, image, all,
                                       templates, 3, 2),
                  InvalidInput);
  CHECK_THROWS_AS(generate_semantic_fp(5, corpus::Split::train,
                                       {"zebra"}, all, templates, 3, 1),
                  InvalidInput);
  CHECK_THROWS_AS(
      generate_semantic_fp(5, corpus::Split::train, image, all,
                           {{"no slot", "x"}}, 3, 1),
      InvalidInput);
}

TEST_CASE("semantic sampling is uniform over absent categories") {
  std::set<std::string> all;
  for (int i = 0; i < 80; ++i) all.insert("cat" + std::to_string(i));
  std::vector<FpTemplate> templates{{"find the {category}", "no {category}"}};
  std::map<std::string, int> freq;
  for (int draw = 0; draw < 100; ++draw) {
    auto out = generate_semantic_fp(1, corpus::Split::train, {}, all,
                                    templates, 1000 + draw, 1);
    REQUIRE(out.size() == 1);
    ++freq[out[0].sentence];
  }
  double chi2 = 0.0;
  const double expected = 100.0 / 80.0;
  int total = 0;
  for (const auto& name : all) {
    const int obs = freq.count("find the " + name) ? freq["find the " + name] : 0;
    total += obs;
    chi2 += (obs - expected) * (obs - expected) / expected;
  }
  CHECK(total == 100);
  CHECK(chi2 < 123.2);  // chi-square df=79, p ~= 0.001
}

TEST_CASE("reasoning generation parses question/answer pairs") {
  FnEndpoint llm(modelio::Capability::chat, [](const modelio::ChatRequest& req) {
    CHECK(req.messages.back().image_ref == "img1.jpg");
    return std::string(
        "Pairs: [[\"Is there a piano?\", \"No, there is no piano here.\"]]");
  });
  auto out = generate_reasoning_fp(llm, "img1.jpg", {"segment the piano"}, 5);
  REQUIRE(out.size() == 1);
  CHECK(out[0].question == "Is there a piano?");
  CHECK(out[0].answer == "No, there is no piano here.");
  CHECK(out[0].tag == corpus::DatasetTag::reasoning_fp);

  CHECK_THROWS_AS(generate_reasoning_fp(llm, "img1.jpg", {}, 5), InvalidInput);
}

TEST_CASE("reasoning generation replays identically under one seed") {
  FnEndpoint llm(modelio::Capability::chat, [](const modelio::ChatRequest& req) {
    // Reply depends on the distractor list, exposing any ordering drift.
    auto list = prompts::find_bracketed_list(req.messages.back().text,
                                             "Queries from other images:");
    return "Pairs: [[" + nlohmann::json(*list).dump() + ", \"absent\"]]";
  });
  std::vector<std::string> distractors{"a", "b", "c", "d", "e"};
  for (int image = 0; image < 10; ++image) {
    const std::string ref = "img" + std::to_string(image);
    auto first = generate_reasoning_fp(llm, ref, distractors, 42);
    auto second = generate_reasoning_fp(llm, ref, distractors, 42);
    CHECK(first == second);
  }
}
