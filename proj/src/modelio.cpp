#ifndef FPBENCH_NO_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "fpbench/modelio.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <thread>

#include "fpbench/common.hpp"
#include "fpbench/errors.hpp"
#include "fpbench/prompts.hpp"

namespace fpbench::modelio {

void ChatRequest::validate() const {
  if (messages.empty()) throw InvalidInput("chat request has no messages");
  for (const auto& m : messages) {
    if (m.role != "system" && m.role != "user" && m.role != "assistant") {
      throw InvalidInput("unknown message role '" + m.role + "'");
    }
  }
  for (const auto& m : messages) {
    if (m.role == "system") continue;
    if (m.role != "user") {
      throw InvalidInput("first non-system message must be from the user");
    }
    break;
  }
}

std::string to_string(Capability c) {
  switch (c) {
    case Capability::chat: return "chat";
    case Capability::segment: return "segment";
    case Capability::unified: return "unified";
  }
  return "chat";
}

Capability capability_from_string(const std::string& s) {
  if (s == "chat") return Capability::chat;
  if (s == "segment") return Capability::segment;
  if (s == "unified") return Capability::unified;
  throw ParseError("unknown capability '" + s + "'");
}

std::string to_string(ImageMode m) {
  switch (m) {
    case ImageMode::url: return "url";
    case ImageMode::base64: return "base64";
    case ImageMode::none: return "none";
  }
  return "url";
}

ImageMode image_mode_from_string(const std::string& s) {
  if (s == "url") return ImageMode::url;
  if (s == "base64") return ImageMode::base64;
  if (s == "none") return ImageMode::none;
  throw ParseError("unknown image_mode '" + s + "'");
}

EndpointConfig EndpointConfig::from_json(const nlohmann::json& j) {
  EndpointConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    c.base_url = j.at("base_url").get<std::string>();
    c.capability = capability_from_string(j.at("capability").get<std::string>());
    c.api_key_env = j.value("api_key_env", std::string{});
    c.model = j.value("model", std::string{});
    if (j.contains("image_mode")) {
      c.image_mode = image_mode_from_string(j.at("image_mode").get<std::string>());
    }
    c.timeout_s = j.value("timeout_s", 120.0);
    c.max_attempts = j.value("max_attempts", 3);
    c.backoff_ms = j.value("backoff_ms", 500);
    c.parallelism = j.value("parallelism", 4);
    c.script_path = j.value("script", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad endpoint config: ") + e.what());
  }
  if (c.max_attempts < 1) throw ParseError("max_attempts must be >= 1");
  if (c.parallelism < 1) throw ParseError("parallelism must be >= 1");
  return c;
}

std::vector<EndpointConfig> load_endpoint_configs(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed endpoint config: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("endpoints") ||
      !doc.at("endpoints").is_array()) {
    throw ParseError("endpoint config must be {\"endpoints\": [...]}");
  }
  std::vector<EndpointConfig> configs;
  for (const auto& j : doc.at("endpoints")) {
    configs.push_back(EndpointConfig::from_json(j));
  }
  return configs;
}

RunLedger::RunLedger(std::string path) : path_(std::move(path)) {
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open ledger file: " + path_);
}

void RunLedger::append(const std::string& request_digest,
                       const std::string& endpoint,
                       const std::string& raw_response, int attempts,
                       double latency_ms) {
  nlohmann::json row{{"request_digest", request_digest},
                     {"endpoint", endpoint},
                     {"raw_response", raw_response},
                     {"attempts", attempts},
                     {"latency_ms", latency_ms}};
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  out << row.dump() << '\n';
  ++entries_;
}

std::int64_t RunLedger::entries() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_;
}

void Endpoint::require(Capability c) const {
  if (config_.capability != c) {
    throw InvalidInput("endpoint '" + config_.name + "' has capability " +
                       to_string(config_.capability) + ", not " + to_string(c));
  }
}

// ---------------------------------------------------------------------------
// HTTP endpoint

struct HttpEndpoint::Limiter {
  explicit Limiter(int n) : sem(n) {}
  std::counting_semaphore<> sem;
};

namespace {

Transport make_httplib_transport(const EndpointConfig& config) {
  // One client per call: httplib clients are not safe for concurrent
  // requests and the in-flight limiter may admit several at once.
  const std::string base_url = config.base_url;
  const double timeout_s = config.timeout_s;
  httplib::Headers headers;
  if (!config.api_key_env.empty()) {
    if (const char* key = std::getenv(config.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  return [base_url, timeout_s, headers](const std::string& path,
                                        const std::string& body) {
    httplib::Client client(base_url);
    client.set_connection_timeout(static_cast<int>(timeout_s));
    client.set_read_timeout(static_cast<int>(timeout_s));
    HttpResponse resp;
    auto result = client.Post(path, headers, body, "application/json");
    if (!result) {
      resp.error = httplib::to_string(result.error());
      return resp;
    }
    resp.status = result->status;
    resp.body = result->body;
    return resp;
  };
}

std::string base64_encode(const std::string& data) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < data.size()) {
    unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                 (static_cast<unsigned char>(data[i + 1]) << 8) |
                 static_cast<unsigned char>(data[i + 2]);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
    i += 3;
  }
  if (i + 1 == data.size()) {
    unsigned v = static_cast<unsigned char>(data[i]) << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == data.size()) {
    unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                 (static_cast<unsigned char>(data[i + 1]) << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

bool transient_status(int status) {
  return status == 429 || status >= 500;
}

}  // namespace

HttpEndpoint::HttpEndpoint(EndpointConfig config,
                           std::shared_ptr<RunLedger> ledger,
                           Transport transport)
    : Endpoint(std::move(config)),
      ledger_(std::move(ledger)),
      limiter_(std::make_unique<Limiter>(config_.parallelism)) {
  transport_ = transport ? std::move(transport) : make_httplib_transport(config_);
}

HttpEndpoint::~HttpEndpoint() = default;

nlohmann::json HttpEndpoint::post_json(const std::string& path,
                                       const nlohmann::json& body) {
  const std::string payload = body.dump();
  const std::string digest =
      fnv1a64_hex(config_.name + '|' + path + '|' + payload);
  const auto start = std::chrono::steady_clock::now();
  HttpResponse resp;
  int attempts = 0;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    attempts = attempt;
    {
      limiter_->sem.acquire();
      struct Release {
        std::counting_semaphore<>& sem;
        ~Release() { sem.release(); }
      } release{limiter_->sem};
      resp = transport_(path, payload);
    }
    if (resp.transport_ok() && !transient_status(resp.status)) break;
    if (attempt < config_.max_attempts) {
      auto delay = std::chrono::milliseconds(config_.backoff_ms) * (1 << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
  }
  const double latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                start)
          .count();
  if (ledger_) {
    ledger_->append(digest, config_.name,
                    resp.transport_ok() ? resp.body : ("<transport: " + resp.error + ">"),
                    attempts, latency_ms);
  }
  if (!resp.transport_ok()) {
    throw UpstreamError(0, attempts,
                        "endpoint '" + config_.name + "': " + resp.error +
                            " after " + std::to_string(attempts) + " attempt(s)");
  }
  if (resp.status != 200) {
    throw UpstreamError(resp.status, attempts,
                        "endpoint '" + config_.name + "': HTTP " +
                            std::to_string(resp.status) + " after " +
                            std::to_string(attempts) + " attempt(s)");
  }
  try {
    return nlohmann::json::parse(resp.body);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("endpoint '" + config_.name + "': non-JSON body");
  }
}

nlohmann::json HttpEndpoint::image_content(const std::string& image_ref) const {
  if (config_.image_mode == ImageMode::base64) {
    std::string bytes = read_file(image_ref);
    return nlohmann::json{
        {"type", "image_url"},
        {"image_url",
         {{"url", "data:image/png;base64," + base64_encode(bytes)}}}};
  }
  return nlohmann::json{{"type", "image_url"}, {"image_url", {{"url", image_ref}}}};
}

ChatResponse HttpEndpoint::chat(const ChatRequest& req) {
  require(Capability::chat);
  req.validate();
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) {
    nlohmann::json msg{{"role", m.role}};
    if (m.image_ref && config_.image_mode != ImageMode::none) {
      msg["content"] = nlohmann::json::array(
          {nlohmann::json{{"type", "text"}, {"text", m.text}},
           image_content(*m.image_ref)});
    } else {
      msg["content"] = m.text;
    }
    messages.push_back(std::move(msg));
  }
  nlohmann::json body{{"messages", messages},
                      {"temperature", req.decoding.temperature},
                      {"max_tokens", req.decoding.max_tokens}};
  if (!config_.model.empty()) body["model"] = config_.model;

  const auto start = std::chrono::steady_clock::now();
  nlohmann::json j = post_json("/v1/chat/completions", body);
  ChatResponse out;
  try {
    out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("endpoint '" + config_.name +
                        "': response lacks choices[0].message.content");
  }
  if (j.contains("usage")) {
    out.usage.prompt = j["usage"].value("prompt_tokens", 0);
    out.usage.completion = j["usage"].value("completion_tokens", 0);
  }
  out.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                start)
          .count();
  return out;
}

SegResponse HttpEndpoint::parse_seg_response(const nlohmann::json& j) const {
  SegResponse out;
  try {
    out.transcript = j.value("transcript", std::string{});
    if (j.contains("mask") && !j.at("mask").is_null()) {
      out.mask = maskops::RleMask::from_json(j.at("mask"));
    }
  } catch (const CorruptRle& e) {
    throw ProtocolError("endpoint '" + config_.name +
                        "': undecodable mask: " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("endpoint '" + config_.name +
                        "': bad segmentation response: " + e.what());
  }
  return out;
}

SegResponse HttpEndpoint::segment(const std::string& query,
                                  const std::string& image_ref) {
  require(Capability::segment);
  nlohmann::json body{{"query", query}};
  body["image"] = config_.image_mode == ImageMode::base64
                      ? image_content(image_ref)
                      : nlohmann::json(image_ref);
  return parse_seg_response(post_json("/v1/segment", body));
}

SegResponse HttpEndpoint::unified(const std::string& query,
                                  const std::string& image_ref) {
  require(Capability::unified);
  nlohmann::json body{{"query", query}};
  body["image"] = config_.image_mode == ImageMode::base64
                      ? image_content(image_ref)
                      : nlohmann::json(image_ref);
  return parse_seg_response(post_json("/v1/unified", body));
}

// ---------------------------------------------------------------------------
// Mocks

void MockGroundTruth::add(const std::string& image_ref,
                          const std::string& expression, Entry entry) {
  entries_[{image_ref, expression}] = std::move(entry);
}

MockGroundTruth MockGroundTruth::from_records(
    const std::vector<corpus::RefRecord>& records,
    const corpus::AnnotationStore& store) {
  MockGroundTruth gt;
  std::map<std::int64_t, maskops::RleMask> mask_cache;
  for (const auto& r : records) {
    Entry e;
    e.is_false_premise = r.is_false_premise;
    e.correction = r.correction;
    if (store.annotations().count(r.ann_id)) {
      auto it = mask_cache.find(r.ann_id);
      if (it == mask_cache.end()) {
        it = mask_cache
                 .emplace(r.ann_id,
                          maskops::rle_encode(store.annotation_mask(r.ann_id)))
                 .first;
      }
      e.mask = it->second;
    }
    gt.add(store.image_ref(r.image_id), r.sentence, std::move(e));
  }
  return gt;
}

const MockGroundTruth::Entry* MockGroundTruth::find(
    const std::string& image_ref, const std::string& expression) const {
  auto it = entries_.find({image_ref, expression});
  if (it == entries_.end()) return nullptr;
  return &it->second;
}

std::optional<MockKind> mock_kind_from_url(const std::string& base_url) {
  const std::string prefix = "mock://";
  if (base_url.rfind(prefix, 0) != 0) return std::nullopt;
  std::string kind = base_url.substr(prefix.size());
  if (kind == "oracle") return MockKind::oracle;
  if (kind == "always-segment") return MockKind::always_segment;
  if (kind == "always-yes") return MockKind::always_yes;
  if (kind == "always-reject") return MockKind::always_reject;
  if (kind == "scripted") return MockKind::scripted;
  if (kind == "augment-echo") return MockKind::augment_echo;
  if (kind == "echo-judge") return MockKind::echo_judge;
  throw ParseError("unknown mock endpoint kind '" + kind + "'");
}

MockScript MockScript::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed mock script: ") + e.what());
  }
  MockScript script;
  if (doc.contains("chat")) {
    for (const auto& [k, v] : doc.at("chat").items()) {
      script.chat[k] = v.get<std::string>();
    }
  }
  if (doc.contains("segment")) {
    for (const auto& [k, v] : doc.at("segment").items()) {
      script.segment[k] = v;
    }
  }
  return script;
}

namespace {

class MockEndpoint : public Endpoint {
 public:
  MockEndpoint(EndpointConfig config, MockKind kind,
               std::shared_ptr<RunLedger> ledger, const MockGroundTruth* gt)
      : Endpoint(std::move(config)), kind_(kind), ledger_(std::move(ledger)), gt_(gt) {
    if (kind_ == MockKind::scripted) {
      if (config_.script_path.empty()) {
        throw InvalidInput("scripted mock '" + config_.name +
                           "' needs a 'script' path");
      }
      script_ = MockScript::load(config_.script_path);
    }
  }

  ChatResponse chat(const ChatRequest& req) override {
    require(Capability::chat);
    req.validate();
    const ChatMessage& last = req.messages.back();
    std::string reply = chat_reply(last);
    log("chat", last.text, reply);
    ChatResponse out;
    out.text = std::move(reply);
    return out;
  }

  SegResponse segment(const std::string& query,
                      const std::string& image_ref) override {
    require(Capability::segment);
    SegResponse out = seg_reply(query, image_ref);
    log("segment", query + '|' + image_ref, out.transcript);
    return out;
  }

  SegResponse unified(const std::string& query,
                      const std::string& image_ref) override {
    require(Capability::unified);
    SegResponse out = unified_reply(query, image_ref);
    log("unified", query + '|' + image_ref, out.transcript);
    return out;
  }

 private:
  void log(const char* op, const std::string& request,
           const std::string& response) {
    if (!ledger_) return;
    ledger_->append(fnv1a64_hex(config_.name + '|' + op + '|' + request),
                    config_.name, response, 1, 0.0);
  }

  const MockGroundTruth::Entry& lookup(const std::string& image_ref,
                                       const std::string& expression) const {
    if (!gt_) {
      throw ProtocolError("mock '" + config_.name +
                          "' has no ground truth primed");
    }
    const auto* e = gt_->find(image_ref, expression);
    if (!e) {
      throw ProtocolError("mock '" + config_.name + "': unprimed query '" +
                          expression + "' on image '" + image_ref + "'");
    }
    return *e;
  }

  std::string chat_reply(const ChatMessage& last) {
    switch (kind_) {
      case MockKind::scripted: {
        auto it = script_.chat.find(last.text);
        if (it == script_.chat.end()) it = script_.chat.find("*");
        if (it == script_.chat.end()) {
          throw ProtocolError("mock '" + config_.name + "': unscripted query");
        }
        return it->second;
      }
      case MockKind::augment_echo: {
        auto originals = prompts::extract_fp_original_list(last.text);
        if (!originals) {
          throw ProtocolError("mock '" + config_.name +
                              "': prompt has no Original list");
        }
        std::vector<std::string> altered;
        altered.reserve(originals->size());
        for (const auto& s : *originals) altered.push_back("fake " + s);
        return "Altered: " + nlohmann::json(altered).dump();
      }
      case MockKind::echo_judge: {
        auto payload = prompts::extract_judge_payload(last.text);
        if (!payload) {
          throw ProtocolError("mock '" + config_.name +
                              "': prompt has no judge payload");
        }
        const std::string candidate = payload->at("candidate").get<std::string>();
        int score = 0;
        for (const auto& ref : payload->at("references")) {
          if (ref.get<std::string>() == candidate) {
            score = 100;
            break;
          }
        }
        return nlohmann::json{{"score", score}, {"reason", "echo"}}.dump();
      }
      case MockKind::always_yes: {
        auto expr = prompts::extract_see_say_expression(last.text);
        return "Yes, the " + expr.value_or("object") +
               " is present in the image.";
      }
      case MockKind::always_reject: {
        auto expr = prompts::extract_see_say_expression(last.text);
        return "No, there is no " + expr.value_or("such object") +
               " in the image.";
      }
      case MockKind::oracle: {
        auto expr = prompts::extract_see_say_expression(last.text);
        if (!expr || !last.image_ref) {
          throw ProtocolError("mock '" + config_.name +
                              "': cannot locate expression or image in prompt");
        }
        const auto& e = lookup(*last.image_ref, *expr);
        if (!e.is_false_premise) {
          return "Yes, the " + *expr + " is present in the image.";
        }
        std::string reply = "No, there is no " + *expr + " in the image.";
        if (e.correction) reply += " Did you mean " + *e.correction + "?";
        return reply;
      }
      case MockKind::always_segment:
        throw InvalidInput("mock kind always-segment has no chat behavior");
    }
    throw ProtocolError("unreachable mock kind");
  }

  SegResponse scripted_seg(const std::string& query) {
    auto it = script_.segment.find(query);
    if (it == script_.segment.end()) it = script_.segment.find("*");
    if (it == script_.segment.end()) {
      throw ProtocolError("mock '" + config_.name + "': unscripted query");
    }
    SegResponse out;
    out.transcript = it->second.value("transcript", std::string{});
    if (it->second.contains("mask") && !it->second.at("mask").is_null()) {
      out.mask = maskops::RleMask::from_json(it->second.at("mask"));
    }
    return out;
  }

  SegResponse seg_reply(const std::string& query, const std::string& image_ref) {
    switch (kind_) {
      case MockKind::scripted:
        return scripted_seg(query);
      case MockKind::always_reject:
        return SegResponse{std::nullopt, "There is no such object."};
      case MockKind::always_segment: {
        auto expr = prompts::extract_segment_expression(query);
        const auto& e = lookup(image_ref, expr.value_or(query));
        return SegResponse{e.mask, "Sure, it is [SEG]."};
      }
      case MockKind::oracle: {
        auto expr = prompts::extract_segment_expression(query);
        const auto& e = lookup(image_ref, expr.value_or(query));
        if (e.is_false_premise) {
          return SegResponse{std::nullopt, "There is no such object."};
        }
        return SegResponse{e.mask, "Sure, it is [SEG]."};
      }
      default:
        throw InvalidInput("mock kind has no segment behavior");
    }
  }

  SegResponse unified_reply(const std::string& query,
                            const std::string& image_ref) {
    switch (kind_) {
      case MockKind::scripted:
        return scripted_seg(query);
      case MockKind::always_reject:
        return SegResponse{std::nullopt, "There is no such object."};
      case MockKind::always_segment: {
        const auto& e = lookup(image_ref, query);
        return SegResponse{e.mask, "Sure, it is [SEG]."};
      }
      case MockKind::oracle: {
        const auto& e = lookup(image_ref, query);
        if (!e.is_false_premise) {
          return SegResponse{e.mask, "Yes, the " + query +
                                         " is present in the image. Sure, it "
                                         "is [SEG]."};
        }
        std::string t = "No, there is no " + query + " in the image.";
        if (e.correction) t += " Did you mean " + *e.correction + "?";
        return SegResponse{std::nullopt, std::move(t)};
      }
      default:
        throw InvalidInput("mock kind has no unified behavior");
    }
  }

  MockKind kind_;
  std::shared_ptr<RunLedger> ledger_;
  const MockGroundTruth* gt_;
  MockScript script_;
};

}  // namespace

std::unique_ptr<Endpoint> make_endpoint(const EndpointConfig& config,
                                        std::shared_ptr<RunLedger> ledger,
                                        const MockGroundTruth* ground_truth,
                                        Transport transport) {
  if (auto kind = mock_kind_from_url(config.base_url)) {
    return std::make_unique<MockEndpoint>(config, *kind, std::move(ledger),
                                          ground_truth);
  }
  return std::make_unique<HttpEndpoint>(config, std::move(ledger),
                                        std::move(transport));
}

}  // namespace fpbench::modelio
