#include <gtest/gtest.h>

#include <atomic>
#include <thread>
#include <vector>

#include "test_support.hpp"
#include "vlmbias/modelgate.hpp"
#include "vlmbias/simulator.hpp"

using namespace vlmbias;
using namespace std::chrono_literals;
using vlmbias::testing::TempDir;

namespace {

// Replays a fixed sequence of replies, then repeats the last one.
class SequenceBackend final : public Backend {
 public:
  explicit SequenceBackend(std::vector<BackendReply> replies) : replies_(std::move(replies)) {}

  BackendReply send(const BackendRequest& request) override {
    std::lock_guard lock(mu_);
    last_ = request;
    const auto i = std::min(calls_++, replies_.size() - 1);
    return replies_[i];
  }
  std::size_t calls() const { return calls_; }
  BackendRequest last() const { return last_; }

 private:
  std::vector<BackendReply> replies_;
  std::size_t calls_ = 0;
  BackendRequest last_;
  std::mutex mu_;
};

BackendReply ok(std::string text) {
  BackendReply r;
  r.status = BackendReply::Status::kOk;
  r.text = std::move(text);
  return r;
}

BackendReply retryable() {
  BackendReply r;
  r.status = BackendReply::Status::kRetryable;
  r.http_status = 503;
  return r;
}

struct Env {
  TempDir dir{"gate"};
  ResponseCache cache{dir / "cache"};
  ImageStore images{dir / "images"};
  ManualClock clock;

  Gateway::Resources resources() { return {&cache, &images, &clock}; }
};

EndpointConfig config(Capability cap = Capability::kChat) {
  EndpointConfig c;
  c.name = "ep";
  c.model = "model-a";
  c.capability = cap;
  c.rate_limit_per_min = 600;
  c.backoff_base = 100ms;
  return c;
}

}  // namespace

TEST(ModelGate, CacheHitSkipsBackend) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{ok("male")});
  Gateway gw(config(), backend, env.resources());
  const auto a = gw.chat_query("question");
  const auto b = gw.chat_query("question");
  EXPECT_FALSE(a.cache_hit);
  EXPECT_TRUE(b.cache_hit);
  EXPECT_EQ(b.text, "male");
  EXPECT_EQ(backend->calls(), 1u);

  // A fresh gateway over the same directory still hits.
  Gateway again(config(), backend, env.resources());
  EXPECT_TRUE(again.chat_query("question").cache_hit);
  EXPECT_EQ(backend->calls(), 1u);
}

TEST(ModelGate, NonceChangesFingerprint) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{ok("a"), ok("b")});
  Gateway gw(config(), backend, env.resources());
  ChatRequest r;
  r.messages.push_back({"user", "q"});
  const auto a = gw.chat(r);
  r.nonce = "sample-1";
  const auto b = gw.chat(r);
  EXPECT_NE(a.fingerprint, b.fingerprint);
  EXPECT_EQ(b.text, "b");
}

TEST(ModelGate, CapabilityMismatchFailsBeforeCall) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{ok("x")});
  Gateway gw(config(Capability::kImageGen), backend, env.resources());
  EXPECT_THROW(gw.chat_query("q"), Error);
  EXPECT_EQ(backend->calls(), 0u);
}

TEST(ModelGate, RetriesWithExponentialBackoff) {
  Env env;
  auto backend =
      std::make_shared<SequenceBackend>(std::vector{retryable(), retryable(), ok("done")});
  Gateway gw(config(), backend, env.resources());
  EXPECT_EQ(gw.chat_query("q").text, "done");
  EXPECT_EQ(backend->calls(), 3u);
  EXPECT_EQ(env.clock.total_slept(), std::chrono::duration_cast<Clock::Duration>(100ms + 200ms));
}

TEST(ModelGate, ExhaustedRetriesRaiseEndpointError) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{retryable()});
  auto c = config();
  c.retry_budget = 2;
  Gateway gw(c, backend, env.resources());
  EXPECT_THROW(gw.chat_query("q"), EndpointError);
  EXPECT_EQ(backend->calls(), 3u);
}

TEST(ModelGate, HardFailureIsNotRetried) {
  Env env;
  BackendReply bad;
  bad.status = BackendReply::Status::kFailed;
  bad.http_status = 401;
  auto backend = std::make_shared<SequenceBackend>(std::vector{bad});
  Gateway gw(config(), backend, env.resources());
  EXPECT_THROW(gw.chat_query("q"), EndpointError);
  EXPECT_EQ(backend->calls(), 1u);
}

TEST(ModelGate, RefusalIsRecordedAndCached) {
  Env env;
  BackendReply refused;
  refused.status = BackendReply::Status::kRefused;
  refused.detail = "content_policy_violation";
  auto backend = std::make_shared<SequenceBackend>(std::vector{refused});
  Gateway gw(config(Capability::kImageGen), backend, env.resources());
  const auto r = gw.generate_image("a person");
  EXPECT_TRUE(r.refused);
  EXPECT_EQ(r.refusal_reason, "content_policy_violation");
  EXPECT_TRUE(gw.generate_image("a person").cache_hit);
  EXPECT_EQ(backend->calls(), 1u);
}

TEST(ModelGate, ImagesAreStoredByHash) {
  Env env;
  BackendReply img;
  img.status = BackendReply::Status::kOk;
  img.image_bytes = make_tagged_png({{"k", "v"}});
  auto backend = std::make_shared<SequenceBackend>(std::vector{img});
  Gateway gw(config(Capability::kImageGen), backend, env.resources());
  const auto r = gw.generate_image("p");
  ASSERT_TRUE(r.image.has_value());
  EXPECT_EQ(r.kind, RawResponse::Kind::kImage);
  EXPECT_EQ(env.images.read(*r.image), img.image_bytes);
}

TEST(ModelGate, OversizedImageRejected) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{ok("x")});
  auto c = config();
  c.max_image_bytes = 10;
  Gateway gw(c, backend, env.resources());
  const auto ref = env.images.put(std::string(64, 'x')).ref;
  EXPECT_THROW(gw.chat_query("q", ref), Error);
  EXPECT_EQ(backend->calls(), 0u);
}

TEST(ModelGate, ImageBytesReachBackend) {
  Env env;
  auto backend = std::make_shared<SequenceBackend>(std::vector{ok("x")});
  Gateway gw(config(), backend, env.resources());
  const auto ref = env.images.put("pixels").ref;
  gw.chat_query("q", ref);
  ASSERT_TRUE(backend->last().image.has_value());
  EXPECT_EQ(*backend->last().image, "pixels");
}

TEST(ModelGate, RateLimiterWaitsForWindow) {
  ManualClock clock;
  RateLimiter limiter(2, clock);
  limiter.acquire();
  limiter.acquire();
  EXPECT_EQ(clock.total_slept(), Clock::Duration::zero());
  limiter.acquire();
  EXPECT_GE(clock.total_slept(), std::chrono::duration_cast<Clock::Duration>(59s));
  EXPECT_LE(clock.total_slept(), std::chrono::duration_cast<Clock::Duration>(60s));
}

namespace {

class ConcurrencyProbe final : public Backend {
 public:
  BackendReply send(const BackendRequest& request) override {
    const int now = ++active_;
    int seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(2ms);
    --active_;
    return ok(request.messages.back().text);
  }
  int peak() const { return peak_.load(); }

 private:
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

}  // namespace

TEST(ModelGate, BoundedParallelism) {
  TempDir dir("parallel");
  ResponseCache cache(dir / "cache");
  auto backend = std::make_shared<ConcurrencyProbe>();
  auto c = config();
  c.max_parallel = 2;
  c.rate_limit_per_min = 100000;
  Gateway gw(c, backend, {&cache, nullptr, nullptr});
  std::vector<std::jthread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&gw, t] {
      for (int i = 0; i < 4; ++i) gw.chat_query("q" + std::to_string(t * 10 + i));
    });
  }
  threads.clear();
  EXPECT_LE(backend->peak(), 2);
  EXPECT_EQ(gw.backend_calls(), 32u);
}

TEST(ModelGate, FingerprintCoversModelAndTemperature) {
  BackendRequest r;
  r.model = "a";
  r.messages.push_back({"user", "q"});
  const auto base = request_fingerprint(r, "", "");
  auto other = r;
  other.model = "b";
  EXPECT_NE(request_fingerprint(other, "", ""), base);
  other = r;
  other.temperature = 0.7;
  EXPECT_NE(request_fingerprint(other, "", ""), base);
  EXPECT_NE(request_fingerprint(r, "abc", ""), base);
  EXPECT_EQ(request_fingerprint(r, "", ""), base);
}

TEST(ModelGate, EndpointConfigJson) {
  const auto c = nlohmann::json::parse(R"({"name":"x","model":"m","capability":"vqa_classify",
    "rate_limit_per_min":5,"backoff_base_ms":10})").get<EndpointConfig>();
  EXPECT_EQ(c.capability, Capability::kVqaClassify);
  EXPECT_EQ(c.rate_limit_per_min, 5);
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<EndpointConfig>().capability, Capability::kVqaClassify);
}
