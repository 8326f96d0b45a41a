#include <gtest/gtest.h>

#include <cstdlib>

#include "vlmbias/digest.hpp"
#include "vlmbias/http_backend.hpp"

using namespace vlmbias;

namespace {

class FakeTransport final : public Transport {
 public:
  HttpResult next;
  std::string path;
  std::string body;
  HttpHeaders headers;
  std::vector<MultipartField> fields;

  HttpResult post_json(const std::string& p, const std::string& b, const HttpHeaders& h) override {
    path = p;
    body = b;
    headers = h;
    return next;
  }
  HttpResult post_multipart(const std::string& p, const std::vector<MultipartField>& f,
                            const HttpHeaders& h) override {
    path = p;
    fields = f;
    headers = h;
    return next;
  }
};

EndpointConfig endpoint(Capability cap = Capability::kChat) {
  EndpointConfig c;
  c.name = "remote";
  c.model = "vlm-1";
  c.capability = cap;
  return c;
}

BackendRequest chat_request() {
  BackendRequest r;
  r.capability = Capability::kChat;
  r.model = "vlm-1";
  r.messages.push_back({"user", "What is the gender?"});
  return r;
}

}  // namespace

TEST(HttpBackend, ChatBodyTextOnly) {
  const auto body = HttpBackend::chat_body(chat_request());
  EXPECT_EQ(body["model"], "vlm-1");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["messages"][0]["content"], "What is the gender?");
}

TEST(HttpBackend, ChatBodyAttachesImageToLastMessage) {
  auto r = chat_request();
  r.messages.insert(r.messages.begin(), {"system", "be terse"});
  r.image = std::string("\x89PNG", 4);
  const auto body = HttpBackend::chat_body(r);
  EXPECT_TRUE(body["messages"][0]["content"].is_string());
  const auto& parts = body["messages"][1]["content"];
  ASSERT_TRUE(parts.is_array());
  EXPECT_EQ(parts[0]["text"], "What is the gender?");
  const std::string url = parts[1]["image_url"]["url"];
  EXPECT_EQ(url, "data:image/png;base64,iVBORw==");
}

TEST(HttpBackend, ChatSuccess) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"choices":[{"message":{"content":"female"},"finish_reason":"stop"}]})", ""};
  HttpBackend backend(endpoint(), t);
  const auto reply = backend.send(chat_request());
  EXPECT_EQ(reply.status, BackendReply::Status::kOk);
  EXPECT_EQ(reply.text, "female");
  EXPECT_EQ(t->path, "/chat/completions");
  EXPECT_TRUE(t->headers.empty());
}

TEST(HttpBackend, ContentFilterIsRefusal) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"choices":[{"message":{"content":null},"finish_reason":"content_filter"}]})",
             ""};
  HttpBackend backend(endpoint(), t);
  EXPECT_EQ(backend.send(chat_request()).status, BackendReply::Status::kRefused);

  t->next = {400, R"({"error":{"code":"content_policy_violation","message":"no"}})", ""};
  const auto reply = backend.send(chat_request());
  EXPECT_EQ(reply.status, BackendReply::Status::kRefused);
  EXPECT_EQ(reply.detail, "content_policy_violation");
}

TEST(HttpBackend, MalformedBodyFails) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, "not json", ""};
  HttpBackend backend(endpoint(), t);
  EXPECT_EQ(backend.send(chat_request()).status, BackendReply::Status::kFailed);
}

TEST(HttpBackend, FailureClassification) {
  using S = BackendReply::Status;
  EXPECT_EQ(classify_http_failure({0, "", "connection refused"}).status, S::kRetryable);
  EXPECT_EQ(classify_http_failure({429, "", ""}).status, S::kRetryable);
  EXPECT_EQ(classify_http_failure({408, "", ""}).status, S::kRetryable);
  EXPECT_EQ(classify_http_failure({502, "", ""}).status, S::kRetryable);
  EXPECT_EQ(classify_http_failure({401, R"({"error":{"code":"invalid_api_key"}})", ""}).status,
            S::kFailed);
  EXPECT_EQ(classify_http_failure({400, R"({"error":{"type":"content_filter"}})", ""}).status,
            S::kRefused);
}

TEST(HttpBackend, ImageGenerationDecodesPayload) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"data":[{"b64_json":"aGVsbG8="}]})", ""};
  HttpBackend backend(endpoint(Capability::kImageGen), t);
  BackendRequest r;
  r.capability = Capability::kImageGen;
  r.model = "img-1";
  r.prompt = "a baker";
  const auto reply = backend.send(r);
  EXPECT_EQ(reply.status, BackendReply::Status::kOk);
  EXPECT_EQ(reply.image_bytes, "hello");
  EXPECT_EQ(t->path, "/images/generations");
  const auto body = nlohmann::json::parse(t->body);
  EXPECT_EQ(body["prompt"], "a baker");
  EXPECT_EQ(body["response_format"], "b64_json");
}

TEST(HttpBackend, ImageEditUsesMultipart) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"data":[{"b64_json":"aGVsbG8="}]})", ""};
  HttpBackend backend(endpoint(Capability::kImageEdit), t);
  BackendRequest r;
  r.capability = Capability::kImageEdit;
  r.prompt = "make it a baker";
  r.image = "png-bytes";
  EXPECT_EQ(backend.send(r).status, BackendReply::Status::kOk);
  EXPECT_EQ(t->path, "/images/edits");
  const auto it = std::find_if(t->fields.begin(), t->fields.end(),
                               [](const auto& f) { return f.name == "image"; });
  ASSERT_NE(it, t->fields.end());
  EXPECT_EQ(it->content, "png-bytes");
  EXPECT_EQ(it->content_type, "image/png");
}

TEST(HttpBackend, MissingPayloadFails) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"data":[]})", ""};
  HttpBackend backend(endpoint(Capability::kImageGen), t);
  BackendRequest r;
  r.capability = Capability::kImageGen;
  EXPECT_EQ(backend.send(r).status, BackendReply::Status::kFailed);
}

TEST(HttpBackend, BearerTokenFromEnvironment) {
  auto t = std::make_shared<FakeTransport>();
  t->next = {200, R"({"choices":[{"message":{"content":"x"}}]})", ""};
  auto c = endpoint();
  c.token_env = "VLMBIAS_TEST_TOKEN_UNSET";
  ::unsetenv(c.token_env.c_str());
  HttpBackend missing(c, t);
  EXPECT_EQ(missing.send(chat_request()).status, BackendReply::Status::kFailed);

  ::setenv("VLMBIAS_TEST_TOKEN", "secret", 1);
  c.token_env = "VLMBIAS_TEST_TOKEN";
  HttpBackend backend(c, t);
  backend.send(chat_request());
  ASSERT_EQ(t->headers.count("Authorization"), 1u);
  EXPECT_EQ(t->headers.find("Authorization")->second, "Bearer secret");
}

TEST(HttpBackend, MalformedBaseUrl) {
  EXPECT_THROW(make_httplib_transport("ftp://x", std::chrono::milliseconds(1000)), Error);
  EXPECT_NO_THROW(make_httplib_transport("http://localhost:1/v1", std::chrono::milliseconds(1000)));
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_prefix64("abc"), 0xba7816bf8f01cfeaULL);
  EXPECT_EQ(base64_decode("aGVsbG8="), "hello");
  EXPECT_THROW(base64_decode("a$=="), Error);
}
