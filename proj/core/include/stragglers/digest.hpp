#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace stragglers {

/// 64-bit FNV-1a over a byte range, as a 16-char lowercase hex string.
inline std::string fnv1a_hex(const void* data, std::size_t len) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace stragglers
