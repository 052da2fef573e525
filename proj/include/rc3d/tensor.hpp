#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rc3d {

// Dims of a rank-4 tensor laid out row-major over (c, h, w, d).
struct Shape {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t d = 1;

  [[nodiscard]] constexpr std::size_t spatial() const { return h * w * d; }
  [[nodiscard]] constexpr std::size_t numel() const { return c * h * w * d; }
  [[nodiscard]] constexpr std::size_t operator[](std::size_t axis) const {
    return axis == 0 ? c : axis == 1 ? h : axis == 2 ? w : d;
  }
  [[nodiscard]] constexpr std::size_t offset(std::size_t ci, std::size_t hi, std::size_t wi,
                                             std::size_t di) const {
    return ((ci * h + hi) * w + wi) * d + di;
  }
  [[nodiscard]] std::string str() const;

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::ostream& operator<<(std::ostream& os, const Shape& s);

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::f64;
}

// Immutable dense tensor. Copies share the payload.
//
// Construction validates the payload length against the shape and rejects
// non-finite elements, so every tensor an operation returns is finite.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return shape_.numel(); }
  [[nodiscard]] std::span<const T> data() const { return {data_->data(), data_->size()}; }
  [[nodiscard]] const T* raw() const { return data_->data(); }
  [[nodiscard]] T operator[](std::size_t i) const { return (*data_)[i]; }
  [[nodiscard]] T at(std::size_t c, std::size_t h, std::size_t w, std::size_t d) const {
    return (*data_)[shape_.offset(c, h, w, d)];
  }
  [[nodiscard]] T item() const;

  // Mutable copy of the payload.
  [[nodiscard]] std::vector<T> to_vector() const { return *data_; }
  // Same payload reinterpreted under a shape with an equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;
  template <typename U>
  [[nodiscard]] Tensor<U> cast() const;

  [[nodiscard]] bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
};

// Max |a - b| over matching elements; shapes must agree.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Binary record: "RC3D", u32 version, u8 dtype tag, four u64 dims, payload.
// All integers and the payload are little-endian.
inline constexpr std::array<char, 4> kTensorMagic{'R', 'C', '3', 'D'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
// Reads a record of either dtype and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
std::vector<char> encode_tensor(const Tensor<T>& t);
template <typename T>
Tensor<T> decode_tensor(std::span<const char> bytes);

}  // namespace rc3d
