#include "rc3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>

#include "binary_io.hpp"
#include "rc3d/error.hpp"

namespace rc3d {

std::string Shape::str() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << '[' << s.c << ',' << s.h << ',' << s.w << ',' << s.d << ']';
}

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>(1, T(0))) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape) {
  if (shape.c == 0 || shape.h == 0 || shape.w == 0 || shape.d == 0) {
    throw ConfigError("tensor dims must be >= 1, got " + shape.str());
  }
  if (data.size() != shape.numel()) {
    throw ConfigError("tensor payload has " + std::to_string(data.size()) + " elements, shape " +
                      shape.str() + " needs " + std::to_string(shape.numel()));
  }
  const auto bad = std::find_if(data.begin(), data.end(), [](T v) { return !std::isfinite(v); });
  if (bad != data.end()) {
    throw NumericError("non-finite value at flat index " +
                       std::to_string(std::distance(data.begin(), bad)) + " in tensor " +
                       shape.str());
  }
  data_ = std::make_shared<const std::vector<T>>(std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return filled(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  return Tensor(shape, std::vector<T>(shape.numel(), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return filled(Shape{}, value);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_.str());
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(data_->begin(), data_->end());
  return Tensor<U>(shape_, std::move(out));
}

template <typename T>
bool Tensor<T>::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(raw(), other.raw(), numel() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  detail::write_le<std::uint32_t>(os, kTensorFormatVersion);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  for (std::size_t axis = 0; axis < 4; ++axis) {
    detail::write_le<std::uint64_t>(os, t.shape()[axis]);
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.raw()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
  } else {
    for (T v : t.data()) detail::write_le(os, v);
  }
  if (!os) throw IoError("failed writing tensor record");
}

namespace {

template <typename Stored, typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  std::vector<Stored> raw(shape.numel());
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(Stored)));
    if (!is) throw InputError("tensor payload truncated");
  } else {
    for (auto& v : raw) v = detail::read_le<Stored>(is);
  }
  if constexpr (std::is_same_v<Stored, T>) {
    return Tensor<T>(shape, std::move(raw));
  } else {
    return Tensor<T>(shape, std::vector<T>(raw.begin(), raw.end()));
  }
}

}  // namespace

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kTensorMagic) throw InputError("bad tensor magic (expected RC3D)");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kTensorFormatVersion) {
    throw InputError("unsupported tensor format version " + std::to_string(version));
  }
  const auto tag = detail::read_le<std::uint8_t>(is);
  Shape shape;
  std::array<std::uint64_t, 4> dims{};
  for (auto& dim : dims) dim = detail::read_le<std::uint64_t>(is);
  constexpr std::uint64_t kMaxElements = 1ULL << 32;
  if (dims[0] * dims[1] > kMaxElements || dims[0] * dims[1] * dims[2] * dims[3] > kMaxElements) {
    throw InputError("tensor record dims too large");
  }
  shape = Shape{dims[0], dims[1], dims[2], dims[3]};
  switch (static_cast<DType>(tag)) {
    case DType::f32: return read_payload<float, T>(is, shape);
    case DType::f64: return read_payload<double, T>(is, shape);
  }
  throw InputError("unknown tensor dtype tag " + std::to_string(tag));
}

template <typename T>
std::vector<char> encode_tensor(const Tensor<T>& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

template <typename T>
Tensor<T> decode_tensor(std::span<const char> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor<T>(is);
}

#define RC3D_INSTANTIATE(T)                                              \
  template class Tensor<T>;                                              \
  template double max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);   \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);        \
  template Tensor<T> read_tensor<T>(std::istream&);                      \
  template std::vector<char> encode_tensor<T>(const Tensor<T>&);         \
  template Tensor<T> decode_tensor<T>(std::span<const char>);

RC3D_INSTANTIATE(float)
RC3D_INSTANTIATE(double)
#undef RC3D_INSTANTIATE

template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

}  // namespace rc3d
