#pragma once

#include <cstddef>
#include <optional>

#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

// Differentiable primitives. Every function records its output on the tape
// of its inputs; all inputs must live on the same tape.
namespace rc3d::ops {

// Conv kernels are rank-5 [C_out, C_in, k, k, k]; they are stored as the rank-4
// tensor [C_out, C_in, k, k*k], which has the same row-major order.
constexpr Shape kernel_shape(std::size_t c_out, std::size_t c_in, std::size_t k) {
  return Shape{c_out, c_in, k, k * k};
}
constexpr Shape vector_shape(std::size_t n) { return Shape{n, 1, 1, 1}; }
constexpr Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols, 1, 1}; }

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Output spatial extent of a convolution along one axis. Throws ConfigError
// when the division is not exact.
std::size_t conv_output_extent(std::size_t in, std::size_t k, ConvGeometry g, const char* axis);

// Cross-correlation (no kernel flip).
template <typename T>
Var<T> conv3d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias, ConvGeometry geometry = {});

enum class KeepAxis { none, h, w, d };

// Average over every spatial axis except keep_axis. keep_axis = none gives the
// per-channel global average [C,1,1,1]; h gives [C,H,1,1], and so on.
template <typename T>
Var<T> avg_pool_axes(Var<T> input, KeepAxis keep_axis);

// weight [C_out, C_in, 1, 1] times input [C_in, 1, 1, 1] plus bias [C_out, 1, 1, 1].
template <typename T>
Var<T> fc(Var<T> input, Var<T> weight, std::optional<Var<T>> bias);

enum class Pointwise { relu, sigmoid };

template <typename T>
Var<T> pointwise(Var<T> input, Pointwise fn);
template <typename T>
Var<T> relu(Var<T> input) {
  return pointwise(input, Pointwise::relu);
}
template <typename T>
Var<T> sigmoid(Var<T> input) {
  return pointwise(input, Pointwise::sigmoid);
}

// Broadcast rules: each dim of b equals a's or is 1.
template <typename T>
Var<T> mul_broadcast(Var<T> a, Var<T> b);

// Sum of operands broadcast to their common shape. Every dim of every operand
// equals the common dim or 1.
template <typename T>
Var<T> add_broadcast(Var<T> a, Var<T> b);
template <typename T>
Var<T> add_broadcast(Var<T> a, Var<T> b, Var<T> c);

// Per-channel standardization over H*W*D with population variance, followed by
// the affine map gamma_c * x + beta_c. gamma and beta are [C,1,1,1].
template <typename T>
Var<T> instance_norm(Var<T> input, Var<T> gamma, Var<T> beta, double eps = 1e-5);

// 2x2x2 max pooling with stride 2. Spatial dims must be even.
template <typename T>
Var<T> max_pool2(Var<T> input);

// Nearest-neighbour upsampling by 2 along every spatial axis.
template <typename T>
Var<T> upsample_nearest2(Var<T> input);

// Channel-wise concatenation [a; b]. Spatial dims must agree.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> sum(Var<T> input);

template <typename T>
Var<T> scale(Var<T> input, T factor);

}  // namespace rc3d::ops
