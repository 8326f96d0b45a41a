#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmbias/image_store.hpp"
#include "vlmbias/types.hpp"

namespace vlmbias {

enum class Capability { kChat, kImageGen, kImageEdit, kVqaClassify };

std::string_view to_string(Capability c);
Capability parse_capability(std::string_view s);

struct EndpointConfig {
  std::string name;
  std::string base_url;
  // Name of the environment variable holding the bearer token; empty disables auth.
  std::string token_env;
  std::string model;
  Capability capability = Capability::kChat;
  int rate_limit_per_min = 60;
  int retry_budget = 3;
  int max_parallel = 4;
  double temperature = 0.0;
  std::size_t max_image_bytes = 20u << 20;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds timeout{120000};
};

void to_json(nlohmann::json& j, const EndpointConfig& c);
void from_json(const nlohmann::json& j, EndpointConfig& c);

struct RawResponse {
  enum class Kind { kText, kImage };

  Kind kind = Kind::kText;
  std::string text;
  std::optional<ImageRef> image;
  std::string format;  // "png" for images
  std::string model;
  double latency_ms = 0.0;
  bool cache_hit = false;
  std::string fingerprint;
  // Content-policy refusals are recorded outcomes, not errors.
  bool refused = false;
  std::string refusal_reason;
};

void to_json(nlohmann::json& j, const RawResponse& r);
void from_json(const nlohmann::json& j, RawResponse& r);

struct ChatMessage {
  std::string role;
  std::string text;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::optional<ImageRef> image;
  // Extra cache-key material; lets callers ask the same question again.
  std::string nonce;
};

/// What a backend sees for one call. Image bytes are already loaded.
struct BackendRequest {
  Capability capability = Capability::kChat;
  std::string model;
  std::vector<ChatMessage> messages;
  std::string prompt;
  std::optional<std::string> image;
  double temperature = 0.0;
  // Set for attribute classification; transports that ask in prose may ignore it.
  std::optional<Dimension> attribute;
};

struct BackendReply {
  enum class Status { kOk, kRetryable, kRefused, kFailed };

  Status status = Status::kFailed;
  std::string text;
  std::string image_bytes;
  std::string detail;
  int http_status = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendReply send(const BackendRequest& request) = 0;
};

class Clock {
 public:
  using Duration = std::chrono::steady_clock::duration;
  using TimePoint = std::chrono::steady_clock::time_point;

  virtual ~Clock() = default;
  virtual TimePoint now() = 0;
  virtual void sleep_for(Duration d) = 0;
};

class SystemClock final : public Clock {
 public:
  TimePoint now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(Duration d) override;
};

/// Deterministic clock for tests: sleeping advances time immediately.
class ManualClock final : public Clock {
 public:
  TimePoint now() override;
  void sleep_for(Duration d) override;
  void advance(Duration d) { sleep_for(d); }
  Duration total_slept() const;

 private:
  mutable std::mutex mu_;
  TimePoint now_{};
  Duration slept_{};
};

/// Sliding one-minute window limiter.
class RateLimiter {
 public:
  RateLimiter(int per_minute, Clock& clock);
  void acquire();

 private:
  int per_minute_;
  Clock& clock_;
  std::mutex mu_;
  std::deque<Clock::TimePoint> issued_;
};

/// On-disk response cache laid out as `<root>/<model>/<fingerprint>.json`.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  std::optional<RawResponse> lookup(std::string_view model, std::string_view fingerprint) const;
  void store(const RawResponse& response);
  std::filesystem::path path_for(std::string_view model, std::string_view fingerprint) const;

 private:
  std::filesystem::path root_;
};

/// Uniform front door to one model endpoint: capability checks, caching,
/// rate limiting, bounded parallelism and retries with exponential backoff.
class Gateway {
 public:
  struct Resources {
    ResponseCache* cache = nullptr;
    ImageStore* images = nullptr;
    Clock* clock = nullptr;
  };

  Gateway(EndpointConfig config, std::shared_ptr<Backend> backend, Resources resources);

  RawResponse chat(const ChatRequest& request);
  RawResponse chat_query(std::string_view prompt, std::optional<ImageRef> image = std::nullopt);
  RawResponse generate_image(std::string_view prompt, std::string_view nonce = {});
  RawResponse edit_image(const ImageRef& image, std::string_view instruction,
                         std::string_view nonce = {});
  /// Asks one attribute question about an image. Returns the raw answer text;
  /// see classify_attribute() for the normalized label.
  RawResponse ask_attribute(const ImageRef& image, Dimension dimension);

  const EndpointConfig& config() const { return config_; }
  std::size_t backend_calls() const { return backend_calls_.load(); }

 private:
  RawResponse execute(BackendRequest request, const std::optional<ImageRef>& image,
                      std::string_view nonce);
  void require(Capability c) const;

  EndpointConfig config_;
  std::shared_ptr<Backend> backend_;
  Resources resources_;
  std::unique_ptr<Clock> owned_clock_;
  RateLimiter limiter_;
  std::counting_semaphore<1024> inflight_;
  std::atomic<std::size_t> backend_calls_{0};
};

/// The question put to a VQA classifier for one dimension.
std::string attribute_question(Dimension dimension);

/// Stable request fingerprint over model id, prompt material, image hash and
/// sampling parameters.
std::string request_fingerprint(const BackendRequest& request, std::string_view image_sha,
                                std::string_view nonce);

}  // namespace vlmbias
