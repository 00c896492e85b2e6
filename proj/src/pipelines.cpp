#include "fpbench/pipelines.hpp"

#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"

namespace fpbench::pipelines {

std::string to_string(Verdict v) {
  return v == Verdict::present ? "present" : "absent";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "present") return Verdict::present;
  if (s == "absent") return Verdict::absent;
  throw ParseError("unknown verdict '" + s + "'");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::cascade: return "cascade";
    case Protocol::unified: return "unified";
    case Protocol::baseline: return "baseline";
  }
  return "cascade";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "cascade") return Protocol::cascade;
  if (s == "unified") return Protocol::unified;
  if (s == "baseline") return Protocol::baseline;
  throw ParseError("unknown protocol '" + s + "'");
}

nlohmann::json Prediction::to_json() const {
  nlohmann::json j;
  j["sent_id"] = sent_id;
  j["protocol"] = to_string(protocol);
  j["verdict"] = to_string(verdict);
  j["correction"] = correction ? nlohmann::json(*correction) : nlohmann::json(nullptr);
  j["mask"] = mask ? mask->to_json() : nlohmann::json(nullptr);
  j["transcript_stage1"] = transcript_stage1;
  j["transcript_stage2"] =
      transcript_stage2 ? nlohmann::json(*transcript_stage2) : nlohmann::json(nullptr);
  j["flags"] = flags;
  return j;
}

Prediction Prediction::from_json(const nlohmann::json& j) {
  Prediction p;
  try {
    p.sent_id = j.at("sent_id").get<std::string>();
    p.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    p.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    if (!j.at("correction").is_null()) {
      p.correction = j.at("correction").get<std::string>();
    }
    if (!j.at("mask").is_null()) {
      p.mask = maskops::RleMask::from_json(j.at("mask"));
    }
    p.transcript_stage1 = j.at("transcript_stage1").get<std::string>();
    if (!j.at("transcript_stage2").is_null()) {
      p.transcript_stage2 = j.at("transcript_stage2").get<std::string>();
    }
    p.flags = j.value("flags", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad prediction: ") + e.what());
  }
  return p;
}

modelio::ChatRequest build_see_say_prompt(const std::string& expression,
                                          const std::string& image_ref) {
  modelio::ChatRequest req;
  req.messages.push_back({"user", prompts::see_say_prompt(expression), image_ref});
  return req;
}

std::pair<Verdict, std::optional<std::string>> classify_presence(
    const std::string& response_text) {
  std::string_view text = response_text;
  std::size_t b = 0;
  while (b < text.size() && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  text = text.substr(b);
  if (!starts_with_ci(text, "no, there is no")) {
    return {Verdict::present, std::nullopt};
  }
  std::size_t term = text.find_first_of(".!?");
  if (term == std::string_view::npos) return {Verdict::absent, std::nullopt};
  std::string_view rest = trim(text.substr(term + 1));
  if (starts_with_ci(rest, "did you mean")) {
    rest = trim(rest.substr(std::string_view("did you mean").size()));
  }
  if (!rest.empty() && rest.back() == '?') {
    rest = trim(rest.substr(0, rest.size() - 1));
  }
  if (rest.empty()) return {Verdict::absent, std::nullopt};
  return {Verdict::absent, std::string(rest)};
}

namespace {

[[noreturn]] void rethrow_with_stage(const UpstreamError& e, const char* stage) {
  throw UpstreamError(e.status, e.attempts,
                      std::string(stage) + ": " + e.what());
}

}  // namespace

Prediction run_cascade(const corpus::RefRecord& record,
                       const std::string& image_ref,
                       modelio::Endpoint& chat_endpoint,
                       modelio::Endpoint& seg_endpoint) {
  Prediction p;
  p.sent_id = record.sent_id;
  p.protocol = Protocol::cascade;

  modelio::ChatResponse stage1;
  try {
    stage1 = chat_endpoint.chat(build_see_say_prompt(record.sentence, image_ref));
  } catch (const UpstreamError& e) {
    rethrow_with_stage(e, "stage1");
  }
  p.transcript_stage1 = stage1.text;
  auto [verdict, correction] = classify_presence(stage1.text);
  p.verdict = verdict;
  p.correction = correction;
  if (verdict == Verdict::absent) return p;  // stage 2 skipped

  try {
    auto seg = seg_endpoint.segment(prompts::segment_query(record.sentence),
                                    image_ref);
    p.transcript_stage2 = seg.transcript;
    p.mask = std::move(seg.mask);
  } catch (const UpstreamError& e) {
    rethrow_with_stage(e, "stage2");
  }
  return p;
}

Prediction run_unified(const corpus::RefRecord& record,
                       const std::string& image_ref,
                       modelio::Endpoint& unified_endpoint) {
  Prediction p;
  p.sent_id = record.sent_id;
  p.protocol = Protocol::unified;
  auto resp = unified_endpoint.unified(record.sentence, image_ref);
  p.transcript_stage1 = resp.transcript;
  auto [verdict, correction] = classify_presence(resp.transcript);
  p.verdict = verdict;
  p.correction = correction;
  p.mask = std::move(resp.mask);
  if (p.verdict == Verdict::absent && p.mask) {
    p.flags.push_back("contradiction");  // denial text but a mask arrived
  }
  return p;
}

Prediction run_baseline(const corpus::RefRecord& record,
                        const std::string& image_ref,
                        modelio::Endpoint& seg_endpoint) {
  Prediction p;
  p.sent_id = record.sent_id;
  p.protocol = Protocol::baseline;
  p.verdict = Verdict::present;
  auto seg = seg_endpoint.segment(prompts::segment_query(record.sentence),
                                  image_ref);
  p.transcript_stage2 = seg.transcript;
  p.mask = std::move(seg.mask);
  return p;
}

std::vector<Prediction> run_protocol(Protocol protocol,
                                     const std::vector<corpus::RefRecord>& records,
                                     const ImageRefFn& image_ref,
                                     modelio::Endpoint* chat_endpoint,
                                     modelio::Endpoint* seg_endpoint,
                                     const RunOptions& options) {
  auto need = [&](modelio::Endpoint* ep, const char* role) {
    if (!ep) throw InvalidInput(std::string("missing ") + role + " endpoint");
  };
  switch (protocol) {
    case Protocol::cascade:
      need(chat_endpoint, "chat");
      need(seg_endpoint, "segmentation");
      break;
    case Protocol::unified:
    case Protocol::baseline:
      need(seg_endpoint, "segmentation");
      break;
  }

  std::vector<Prediction> out(records.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      {
        std::lock_guard<std::mutex> lock(error_mu);
        if (first_error) return;
      }
      try {
        const auto& r = records[i];
        const std::string ref = image_ref(r.image_id);
        switch (protocol) {
          case Protocol::cascade:
            out[i] = run_cascade(r, ref, *chat_endpoint, *seg_endpoint);
            break;
          case Protocol::unified:
            out[i] = run_unified(r, ref, *seg_endpoint);
            break;
          case Protocol::baseline:
            out[i] = run_baseline(r, ref, *seg_endpoint);
            break;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int n_threads =
      std::max(1, std::min<int>(options.concurrency,
                                static_cast<int>(records.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::vector<Prediction> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(Prediction::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void write_predictions(const std::string& path,
                       const std::vector<Prediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    out += p.to_json().dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace fpbench::pipelines
