#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpbench/corpus.hpp"
#include "fpbench/maskops.hpp"

namespace fpbench::modelio {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string text;
  std::optional<std::string> image_ref;
};

struct Decoding {
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  Decoding decoding;

  void validate() const;  // non-empty, first non-system role is user
};

struct TokenUsage {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  double latency_ms = 0.0;
};

struct SegResponse {
  std::optional<maskops::RleMask> mask;
  std::string transcript;
};

enum class Capability { chat, segment, unified };
enum class ImageMode { url, base64, none };

std::string to_string(Capability c);
Capability capability_from_string(const std::string& s);
std::string to_string(ImageMode m);
ImageMode image_mode_from_string(const std::string& s);

struct EndpointConfig {
  std::string name;
  std::string base_url;        // http(s)://... or mock://<kind>
  std::string api_key_env;     // env var holding the key; never the key itself
  std::string model;
  Capability capability = Capability::chat;
  ImageMode image_mode = ImageMode::url;
  double timeout_s = 120.0;
  int max_attempts = 3;
  int backoff_ms = 500;
  int parallelism = 4;
  std::string script_path;     // scripted mocks only

  static EndpointConfig from_json(const nlohmann::json& j);
};

/// Parses {"endpoints": [...]} config files.
std::vector<EndpointConfig> load_endpoint_configs(const std::string& path);

/// Append-only JSONL of every raw endpoint exchange, written before any
/// parsing so runs can be replayed. Thread-safe, single writer.
class RunLedger {
 public:
  explicit RunLedger(std::string path);

  void append(const std::string& request_digest, const std::string& endpoint,
              const std::string& raw_response, int attempts, double latency_ms);

  std::int64_t entries() const;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  mutable std::mutex mu_;
  std::int64_t entries_ = 0;
};

class Endpoint {
 public:
  virtual ~Endpoint() = default;

  const std::string& name() const { return config_.name; }
  Capability capability() const { return config_.capability; }
  const EndpointConfig& config() const { return config_; }

  virtual ChatResponse chat(const ChatRequest& req) = 0;
  virtual SegResponse segment(const std::string& query,
                              const std::string& image_ref) = 0;
  virtual SegResponse unified(const std::string& query,
                              const std::string& image_ref) = 0;

 protected:
  explicit Endpoint(EndpointConfig config) : config_(std::move(config)) {}
  void require(Capability c) const;

  EndpointConfig config_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string error;  // non-empty on transport failure

  bool transport_ok() const { return error.empty(); }
};

/// POST-only JSON transport, injectable for tests.
using Transport =
    std::function<HttpResponse(const std::string& path, const std::string& body)>;

/// Chat-completion style HTTP client with bounded retries, exponential
/// backoff and a per-endpoint in-flight limit. Segmentation and unified
/// endpoints use the /v1/segment and /v1/unified routes with the mask as
/// uncompressed RLE JSON.
class HttpEndpoint : public Endpoint {
 public:
  HttpEndpoint(EndpointConfig config, std::shared_ptr<RunLedger> ledger,
               Transport transport = {});
  ~HttpEndpoint() override;

  ChatResponse chat(const ChatRequest& req) override;
  SegResponse segment(const std::string& query,
                      const std::string& image_ref) override;
  SegResponse unified(const std::string& query,
                      const std::string& image_ref) override;

 private:
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body);
  nlohmann::json image_content(const std::string& image_ref) const;
  SegResponse parse_seg_response(const nlohmann::json& j) const;

  std::shared_ptr<RunLedger> ledger_;
  Transport transport_;
  struct Limiter;
  std::unique_ptr<Limiter> limiter_;
};

/// Per-query ground truth used to prime deterministic mock endpoints.
/// Keyed by (image_ref, expression).
class MockGroundTruth {
 public:
  struct Entry {
    bool is_false_premise = false;
    std::optional<std::string> correction;
    std::optional<maskops::RleMask> mask;  // referent mask (source referent
                                           // for false premises)
  };

  void add(const std::string& image_ref, const std::string& expression,
           Entry entry);

  static MockGroundTruth from_records(
      const std::vector<corpus::RefRecord>& records,
      const corpus::AnnotationStore& store);

  const Entry* find(const std::string& image_ref,
                    const std::string& expression) const;

 private:
  std::map<std::pair<std::string, std::string>, Entry> entries_;
};

enum class MockKind {
  oracle,         // answers from ground truth
  always_segment, // segments every query with the primed referent mask
  always_yes,     // confirms every presence question
  always_reject,  // denies every query
  scripted,       // exact query -> response map
  augment_echo,   // deterministic "fake "-prefix augmenter
  echo_judge,     // 100 iff candidate exactly equals a reference, else 0
};

std::optional<MockKind> mock_kind_from_url(const std::string& base_url);

struct MockScript {
  // Keys are exact request texts; "*" is a fallback matching anything.
  std::map<std::string, std::string> chat;          // message text -> reply
  std::map<std::string, nlohmann::json> segment;    // query -> {transcript, mask}

  static MockScript load(const std::string& path);
};

/// Builds an endpoint from its config: mock:// URLs produce hermetic,
/// deterministic in-process endpoints, anything else an HttpEndpoint.
std::unique_ptr<Endpoint> make_endpoint(const EndpointConfig& config,
                                        std::shared_ptr<RunLedger> ledger,
                                        const MockGroundTruth* ground_truth,
                                        Transport transport = {});

}  // namespace fpbench::modelio
