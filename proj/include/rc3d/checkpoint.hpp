#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "rc3d/net.hpp"

namespace rc3d {

// Container of named tensor records plus the network spec as canonical text.
//
//   "RC3K" | u32 version | u64 len + spec text | u32 crc32(spec text)
//   | u64 count | count x (u64 len + name | tensor record)
//
// Loading recomputes the spec hash and, when an expected spec is given, rejects
// checkpoints written for a different spec.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const net::Network<T>& network);

template <typename T>
net::Network<T> load_checkpoint(const std::filesystem::path& path,
                                const std::optional<net::NetworkSpec>& expected = std::nullopt);

template <typename T>
std::vector<char> encode_checkpoint(const net::Network<T>& network);
template <typename T>
net::Network<T> decode_checkpoint(std::span<const char> bytes,
                                  const std::optional<net::NetworkSpec>& expected = std::nullopt);

}  // namespace rc3d
