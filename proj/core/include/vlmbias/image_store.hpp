#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

namespace vlmbias {

/// Content-addressed reference to an image on disk.
struct ImageRef {
  std::string sha256;
  std::string path;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

void to_json(nlohmann::json& j, const ImageRef& ref);
void from_json(const nlohmann::json& j, ImageRef& ref);

/// Stores image bytes as `<root>/<sha256>.png`. Writes are atomic and idempotent.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root);

  struct PutResult {
    ImageRef ref;
    bool written = false;
  };

  PutResult put(std::string_view bytes);
  std::string read(const ImageRef& ref) const;
  bool contains(const ImageRef& ref) const;
  std::filesystem::path path_for(std::string_view sha256) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
};

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace vlmbias
