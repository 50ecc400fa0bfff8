#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace defletter {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 over a byte range.
Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& digest);

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) { return to_hex(sha256(bytes)); }
inline std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Throws IoFailure when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace defletter
