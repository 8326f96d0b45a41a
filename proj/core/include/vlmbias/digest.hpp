#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vlmbias {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// First eight bytes of the SHA-256 digest, big-endian.
std::uint64_t sha256_prefix64(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::string base64_decode(std::string_view encoded);

}  // namespace vlmbias
