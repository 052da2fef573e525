#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace rc3d {

// Stable per-purpose seed: mixes a base seed with a label so that, e.g., each
// named parameter draws from its own stream regardless of build order.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

// CRC-32 (zlib polynomial) of a byte range.
std::uint32_t crc32(std::span<const char> bytes);
std::uint32_t crc32(std::string_view text);
inline std::uint32_t crc32(const std::string& text) { return crc32(std::string_view(text)); }
std::string hex32(std::uint32_t v);

// Applies RC3D_THREADS (if set) to the linear-algebra thread pool. Returns the
// thread count in effect.
int configure_threads();

std::string version();

}  // namespace rc3d
