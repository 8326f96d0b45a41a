#include "vlmbias/http_backend.hpp"

#include <httplib.h>

#include <cstdlib>
#include <regex>

#include "vlmbias/digest.hpp"

namespace vlmbias {
namespace {

class HttplibTransport final : public Transport {
 public:
  HttplibTransport(const std::string& base_url, std::chrono::milliseconds timeout) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(base_url, m, kUrl)) throw Error("malformed base_url: '" + base_url + "'");
    prefix_ = m[2].matched ? m[2].str() : "";
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    client_ = std::make_unique<httplib::Client>(m[1].str());
    client_->set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client_->set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client_->set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  }

  HttpResult post_json(const std::string& path, const std::string& body,
                       const HttpHeaders& headers) override {
    return convert(client_->Post(prefix_ + path, to_httplib(headers), body, "application/json"));
  }

  HttpResult post_multipart(const std::string& path, const std::vector<MultipartField>& fields,
                            const HttpHeaders& headers) override {
    httplib::MultipartFormDataItems items;
    for (const auto& f : fields) items.push_back({f.name, f.content, f.filename, f.content_type});
    return convert(client_->Post(prefix_ + path, to_httplib(headers), items));
  }

 private:
  static httplib::Headers to_httplib(const HttpHeaders& headers) {
    return httplib::Headers(headers.begin(), headers.end());
  }

  static HttpResult convert(const httplib::Result& res) {
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

  std::string prefix_;
  std::unique_ptr<httplib::Client> client_;
};

std::string error_code(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("error")) return {};
  const auto& e = j["error"];
  if (e.is_object()) {
    if (e.contains("code") && e["code"].is_string()) return e["code"].get<std::string>();
    if (e.contains("type") && e["type"].is_string()) return e["type"].get<std::string>();
  }
  return {};
}

}  // namespace

std::unique_ptr<Transport> make_httplib_transport(const std::string& base_url,
                                                  std::chrono::milliseconds timeout) {
  return std::make_unique<HttplibTransport>(base_url, timeout);
}

BackendReply classify_http_failure(const HttpResult& result) {
  BackendReply reply;
  reply.http_status = result.status;
  reply.detail = result.status == 0 ? result.error : result.body.substr(0, 512);
  if (result.status == 0 || result.status == 408 || result.status == 429 || result.status >= 500) {
    reply.status = BackendReply::Status::kRetryable;
    return reply;
  }
  const std::string code = error_code(result.body);
  if (code == "content_policy_violation" || code == "content_filter") {
    reply.status = BackendReply::Status::kRefused;
    reply.detail = code;
    return reply;
  }
  reply.status = BackendReply::Status::kFailed;
  return reply;
}

HttpBackend::HttpBackend(EndpointConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (!transport_) throw Error("HttpBackend needs a transport");
}

HttpHeaders HttpBackend::auth_headers() const {
  HttpHeaders headers;
  if (!config_.token_env.empty()) {
    const char* token = std::getenv(config_.token_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error("environment variable " + config_.token_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  return headers;
}

nlohmann::json HttpBackend::chat_body(const BackendRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    const auto& m = request.messages[i];
    const bool last = i + 1 == request.messages.size();
    if (last && request.image) {
      const std::string url =
          "data:image/png;base64," +
          base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(request.image->data()),
                                  request.image->size()));
      messages.push_back(
          {{"role", m.role},
           {"content", nlohmann::json::array({{{"type", "text"}, {"text", m.text}},
                                              {{"type", "image_url"},
                                               {"image_url", {{"url", url}}}}})}});
    } else {
      messages.push_back({{"role", m.role}, {"content", m.text}});
    }
  }
  return {{"model", request.model}, {"messages", messages}, {"temperature", request.temperature}};
}

BackendReply HttpBackend::send(const BackendRequest& request) {
  HttpHeaders headers;
  try {
    headers = auth_headers();
  } catch (const Error& e) {
    BackendReply reply;
    reply.status = BackendReply::Status::kFailed;
    reply.detail = e.what();
    return reply;
  }
  switch (request.capability) {
    case Capability::kChat:
    case Capability::kVqaClassify:
      return send_chat(request, headers);
    case Capability::kImageGen:
    case Capability::kImageEdit:
      return send_image(request, headers);
  }
  return {};
}

BackendReply HttpBackend::send_chat(const BackendRequest& request, const HttpHeaders& headers) {
  const HttpResult result = transport_->post_json("/chat/completions", chat_body(request).dump(),
                                                  headers);
  if (result.status < 200 || result.status >= 300) return classify_http_failure(result);

  BackendReply reply;
  reply.http_status = result.status;
  auto j = nlohmann::json::parse(result.body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty()) {
    reply.status = BackendReply::Status::kFailed;
    reply.detail = "chat response has no choices";
    return reply;
  }
  const auto& choice = j["choices"][0];
  const auto& message = choice.value("message", nlohmann::json::object());
  if (choice.value("finish_reason", "") == "content_filter" ||
      (message.contains("refusal") && message["refusal"].is_string())) {
    reply.status = BackendReply::Status::kRefused;
    reply.detail = message.contains("refusal") && message["refusal"].is_string()
                       ? message["refusal"].get<std::string>()
                       : "content_filter";
    return reply;
  }
  reply.status = BackendReply::Status::kOk;
  if (message.contains("content") && message["content"].is_string()) {
    reply.text = message["content"].get<std::string>();
  }
  return reply;
}

BackendReply HttpBackend::send_image(const BackendRequest& request, const HttpHeaders& headers) {
  HttpResult result;
  if (request.capability == Capability::kImageGen) {
    nlohmann::json body = {{"model", request.model},
                           {"prompt", request.prompt},
                           {"n", 1},
                           {"response_format", "b64_json"}};
    result = transport_->post_json("/images/generations", body.dump(), headers);
  } else {
    std::vector<MultipartField> fields = {
        {"model", request.model, "", ""},
        {"prompt", request.prompt, "", ""},
        {"n", "1", "", ""},
        {"response_format", "b64_json", "", ""},
        {"image", request.image.value_or(""), "image.png", "image/png"},
    };
    result = transport_->post_multipart("/images/edits", fields, headers);
  }
  if (result.status < 200 || result.status >= 300) return classify_http_failure(result);

  BackendReply reply;
  reply.http_status = result.status;
  auto j = nlohmann::json::parse(result.body, nullptr, false);
  if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() || j["data"].empty() ||
      !j["data"][0].contains("b64_json")) {
    reply.status = BackendReply::Status::kFailed;
    reply.detail = "image response has no b64_json payload";
    return reply;
  }
  try {
    reply.image_bytes = base64_decode(j["data"][0]["b64_json"].get<std::string>());
  } catch (const Error& e) {
    reply.status = BackendReply::Status::kFailed;
    reply.detail = e.what();
    return reply;
  }
  reply.status = BackendReply::Status::kOk;
  return reply;
}

}  // namespace vlmbias
