#include <zlib.h>

#include <cstdint>
#include <cstring>

#include "vlmbias/simulator.hpp"

namespace vlmbias {
namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
constexpr int kSide = 8;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

std::uint32_t get_u32(std::string_view s, std::size_t pos) {
  return (std::uint32_t(static_cast<unsigned char>(s[pos])) << 24) |
         (std::uint32_t(static_cast<unsigned char>(s[pos + 1])) << 16) |
         (std::uint32_t(static_cast<unsigned char>(s[pos + 2])) << 8) |
         std::uint32_t(static_cast<unsigned char>(s[pos + 3]));
}

void put_chunk(std::string& out, std::string_view type, std::string_view data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type);
  body.append(data);
  out.append(body);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::string make_tagged_png(const std::vector<std::pair<std::string, std::string>>& text) {
  std::string out(reinterpret_cast<const char*>(kSignature), sizeof(kSignature));

  std::string ihdr;
  put_u32(ihdr, kSide);
  put_u32(ihdr, kSide);
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // adaptive filtering
  ihdr.push_back(0);  // no interlace
  put_chunk(out, "IHDR", ihdr);

  for (const auto& [key, value] : text) {
    std::string chunk = key;
    chunk.push_back('\0');
    chunk.append(value);
    put_chunk(out, "tEXt", chunk);
  }

  std::string raw;
  for (int y = 0; y < kSide; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < kSide; ++x) raw.push_back(static_cast<char>(((x + y) & 1) ? 0xc0 : 0x40));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK) {
    throw Error("zlib compression failed");
  }
  packed.resize(packed_size);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

std::optional<std::map<std::string, std::string>> read_png_text(std::string_view png) {
  if (png.size() < sizeof(kSignature) || std::memcmp(png.data(), kSignature, sizeof(kSignature)) != 0) {
    return std::nullopt;
  }
  std::map<std::string, std::string> out;
  std::size_t pos = sizeof(kSignature);
  while (pos + 12 <= png.size()) {
    const std::uint32_t len = get_u32(png, pos);
    if (pos + 12 + len > png.size()) return std::nullopt;
    const std::string_view type = png.substr(pos + 4, 4);
    const std::string_view data = png.substr(pos + 8, len);
    if (type == "tEXt") {
      const auto nul = data.find('\0');
      if (nul != std::string_view::npos) {
        out.emplace(std::string(data.substr(0, nul)), std::string(data.substr(nul + 1)));
      }
    }
    if (type == "IEND") return out;
    pos += 12 + len;
  }
  return std::nullopt;
}

}  // namespace vlmbias
