#include "rc3d/checkpoint.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "rc3d/error.hpp"
#include "rc3d/runtime.hpp"

namespace rc3d {

namespace {

constexpr std::array<char, 4> kMagic{'R', 'C', '3', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

template <typename T>
std::vector<char> encode_checkpoint(const net::Network<T>& network) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic.data(), kMagic.size());
  detail::write_le<std::uint32_t>(os, kVersion);
  const std::string text = net::canonical_text(network.spec());
  detail::write_string(os, text);
  detail::write_le<std::uint32_t>(os, crc32(text));
  detail::write_le<std::uint64_t>(os, network.params().size());
  for (const auto& p : network.params()) {
    detail::write_string(os, p.name);
    write_tensor(os, p.value);
  }
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

template <typename T>
net::Network<T> decode_checkpoint(std::span<const char> bytes, const std::optional<net::NetworkSpec>& expected) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw InputError("not a checkpoint (bad magic)");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
  const std::string text = detail::read_string(is);
  const auto stored_hash = detail::read_le<std::uint32_t>(is);
  if (crc32(text) != stored_hash) throw InputError("checkpoint spec text is corrupt (hash mismatch)");
  const net::NetworkSpec spec = net::network_spec_from_json(parse_json_text(text, "checkpoint spec"));
  if (expected && net::spec_hash(*expected) != stored_hash) {
    throw InputError("checkpoint was written for a different network spec (hash " + hex32(stored_hash) +
                     ", expected " + hex32(net::spec_hash(*expected)) + ")");
  }
  const auto count = detail::read_le<std::uint64_t>(is);
  if (count > (1U << 20)) throw InputError("implausible checkpoint tensor count");
  std::vector<net::NamedParam<T>> params;
  params.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    net::NamedParam<T> p;
    p.name = detail::read_string(is, 4096);
    p.value = read_tensor<T>(is);
    p.recalib = p.name.find(".pe.") != std::string::npos || p.name.find(".cse.") != std::string::npos;
    params.push_back(std::move(p));
  }
  return net::Network<T>::from_params(spec, std::move(params));
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const net::Network<T>& network) {
  const auto bytes = encode_checkpoint(network);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
net::Network<T> load_checkpoint(const std::filesystem::path& path, const std::optional<net::NetworkSpec>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint<T>(bytes, expected);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

#define RC3D_INSTANTIATE(T)                                                                               \
  template void save_checkpoint<T>(const std::filesystem::path&, const net::Network<T>&);                 \
  template net::Network<T> load_checkpoint<T>(const std::filesystem::path&,                               \
                                              const std::optional<net::NetworkSpec>&);                    \
  template std::vector<char> encode_checkpoint<T>(const net::Network<T>&);                                \
  template net::Network<T> decode_checkpoint<T>(std::span<const char>, const std::optional<net::NetworkSpec>&);

RC3D_INSTANTIATE(float)
RC3D_INSTANTIATE(double)
#undef RC3D_INSTANTIATE

}  // namespace rc3d
