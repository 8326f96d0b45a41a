#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vlmbias/modelgate.hpp"

namespace vlmbias {

struct HttpResult {
  int status = 0;  // 0 means the request never completed
  std::string body;
  std::string error;
};

struct MultipartField {
  std::string name;
  std::string content;
  std::string filename;
  std::string content_type;
};

using HttpHeaders = std::multimap<std::string, std::string>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post_json(const std::string& path, const std::string& body,
                               const HttpHeaders& headers) = 0;
  virtual HttpResult post_multipart(const std::string& path,
                                    const std::vector<MultipartField>& fields,
                                    const HttpHeaders& headers) = 0;
};

/// cpp-httplib client bound to one base URL such as `https://api.example.com/v1`.
std::unique_ptr<Transport> make_httplib_transport(const std::string& base_url,
                                                  std::chrono::milliseconds timeout);

/// Speaks the chat-completion / image-generation JSON conventions:
///   chat, vqa_classify  POST {prefix}/chat/completions
///   image_gen           POST {prefix}/images/generations
///   image_edit          POST {prefix}/images/edits (multipart)
/// Images travel as base64 data URLs on the way in and `b64_json` on the way out.
class HttpBackend final : public Backend {
 public:
  HttpBackend(EndpointConfig config, std::shared_ptr<Transport> transport);
  BackendReply send(const BackendRequest& request) override;

  static nlohmann::json chat_body(const BackendRequest& request);

 private:
  HttpHeaders auth_headers() const;
  BackendReply send_chat(const BackendRequest& request, const HttpHeaders& headers);
  BackendReply send_image(const BackendRequest& request, const HttpHeaders& headers);

  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
};

/// Maps an HTTP status and error body to a reply status. Exposed for tests.
BackendReply classify_http_failure(const HttpResult& result);

}  // namespace vlmbias
