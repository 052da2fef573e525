#include "rc3d/runtime.hpp"

#include <zlib.h>

#include <Eigen/Core>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "rc3d/error.hpp"

namespace rc3d {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  // FNV-1a over the label, then mixed with the seed.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h);
}

std::uint32_t crc32(std::span<const char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1U << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), n);
    offset += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32(std::string_view text) { return crc32(std::span<const char>(text.data(), text.size())); }

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

int configure_threads() {
  if (const char* env = std::getenv("RC3D_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw ConfigError(std::string("RC3D_THREADS must be a positive integer, got '") + env + "'");
    }
    Eigen::setNbThreads(static_cast<int>(n));
  }
  return Eigen::nbThreads();
}

std::string version() { return RC3D_VERSION; }

}  // namespace rc3d
