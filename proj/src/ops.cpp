#include "rc3d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rc3d/error.hpp"

namespace rc3d::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col scratch elements per chunk.
constexpr std::size_t kColumnBudget = std::size_t{1} << 17;

template <typename T>
Tape<T>* same_tape(std::initializer_list<Var<T>> vars, const char* op) {
  Tape<T>* tape = vars.begin()->tape;
  if (tape == nullptr) throw UsageError(std::string(op) + ": variable has no tape");
  for (const auto& v : vars) {
    if (v.tape != tape) throw UsageError(std::string(op) + ": inputs live on different tapes");
  }
  return tape;
}

bool is_vector(const Shape& s, std::size_t n) { return s == Shape{n, 1, 1, 1}; }

// Element strides of `in` when read at positions of `out`; broadcast axes get 0.
std::array<std::size_t, 4> broadcast_strides(const Shape& in, const Shape& out, const char* op) {
  std::array<std::size_t, 4> natural{in.h * in.w * in.d, in.w * in.d, in.d, 1};
  std::array<std::size_t, 4> strides{};
  for (std::size_t axis = 0; axis < 4; ++axis) {
    if (in[axis] == out[axis]) {
      strides[axis] = natural[axis];
    } else if (in[axis] == 1) {
      strides[axis] = 0;
    } else {
      throw ConfigError(std::string(op) + ": shape " + in.str() + " is not broadcastable to " +
                        out.str());
    }
  }
  return strides;
}

Shape common_shape(std::initializer_list<Shape> shapes, const char* op) {
  Shape out{1, 1, 1, 1};
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  for (const auto& s : shapes) {
    for (std::size_t axis = 0; axis < 4; ++axis) {
      if (dims[axis] == 1) {
        dims[axis] = s[axis];
      } else if (s[axis] != 1 && s[axis] != dims[axis]) {
        std::string msg = std::string(op) + ": shapes not broadcastable:";
        for (const auto& t : shapes) msg += " " + t.str();
        throw ConfigError(msg);
      }
    }
  }
  out = Shape{dims[0], dims[1], dims[2], dims[3]};
  return out;
}

// Calls fn(out_index, in_index) for every element of `out`.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 4>& st, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t c = 0; c < out.c; ++c) {
    for (std::size_t h = 0; h < out.h; ++h) {
      for (std::size_t w = 0; w < out.w; ++w) {
        const std::size_t base = c * st[0] + h * st[1] + w * st[2];
        for (std::size_t d = 0; d < out.d; ++d, ++o) fn(o, base + d * st[3]);
      }
    }
  }
}

struct ConvPlan {
  Shape in;
  Shape out;
  std::size_t k = 1;
  ConvGeometry g;
  std::size_t rows = 0;  // C_in * k^3
  bool pointwise_fast = false;
};

template <typename T>
void im2col(const T* x, const ConvPlan& p, std::size_t oh0, std::size_t oh1, T* col) {
  const std::size_t n = (oh1 - oh0) * p.out.w * p.out.d;
  const auto pad = static_cast<std::ptrdiff_t>(p.g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(p.g.stride);
  const auto H = static_cast<std::ptrdiff_t>(p.in.h);
  const auto W = static_cast<std::ptrdiff_t>(p.in.w);
  const auto D = static_cast<std::ptrdiff_t>(p.in.d);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < p.in.c; ++ci) {
    const T* xc = x + ci * p.in.spatial();
    for (std::size_t kh = 0; kh < p.k; ++kh) {
      for (std::size_t kw = 0; kw < p.k; ++kw) {
        for (std::size_t kd = 0; kd < p.k; ++kd, ++row) {
          T* dst = col + row * n;
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride - pad + static_cast<std::ptrdiff_t>(kh);
            for (std::size_t ow = 0; ow < p.out.w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride - pad + static_cast<std::ptrdiff_t>(kw);
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
                std::fill_n(dst, p.out.d, T(0));
                dst += p.out.d;
                continue;
              }
              const T* src = xc + (ih * W + iw) * D;
              if (stride == 1) {
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kd) - pad;
                const auto od_n = static_cast<std::ptrdiff_t>(p.out.d);
                const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, od_n);
                const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(D - shift, lo, od_n);
                std::fill(dst, dst + lo, T(0));
                std::copy(src + lo + shift, src + hi + shift, dst + lo);
                std::fill(dst + hi, dst + od_n, T(0));
                dst += od_n;
                continue;
              }
              for (std::size_t od = 0; od < p.out.d; ++od) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * stride - pad + static_cast<std::ptrdiff_t>(kd);
                *dst++ = (id < 0 || id >= D) ? T(0) : src[id];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvPlan& p, std::size_t oh0, std::size_t oh1, T* dx) {
  const std::size_t n = (oh1 - oh0) * p.out.w * p.out.d;
  const auto pad = static_cast<std::ptrdiff_t>(p.g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(p.g.stride);
  const auto H = static_cast<std::ptrdiff_t>(p.in.h);
  const auto W = static_cast<std::ptrdiff_t>(p.in.w);
  const auto D = static_cast<std::ptrdiff_t>(p.in.d);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < p.in.c; ++ci) {
    T* xc = dx + ci * p.in.spatial();
    for (std::size_t kh = 0; kh < p.k; ++kh) {
      for (std::size_t kw = 0; kw < p.k; ++kw) {
        for (std::size_t kd = 0; kd < p.k; ++kd, ++row) {
          const T* src = col + row * n;
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride - pad + static_cast<std::ptrdiff_t>(kh);
            for (std::size_t ow = 0; ow < p.out.w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride - pad + static_cast<std::ptrdiff_t>(kw);
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
                src += p.out.d;
                continue;
              }
              T* dst = xc + (ih * W + iw) * D;
              if (stride == 1) {
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kd) - pad;
                const auto od_n = static_cast<std::ptrdiff_t>(p.out.d);
                const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, od_n);
                const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(D - shift, lo, od_n);
                for (std::ptrdiff_t od = lo; od < hi; ++od) dst[od + shift] += src[od];
                src += od_n;
                continue;
              }
              for (std::size_t od = 0; od < p.out.d; ++od, ++src) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * stride - pad + static_cast<std::ptrdiff_t>(kd);
                if (id >= 0 && id < D) dst[id] += *src;
              }
            }
          }
        }
      }
    }
  }
}

// Output-row chunks [oh0, oh1) whose im2col scratch stays within budget.
std::size_t rows_per_chunk(const ConvPlan& p) {
  const std::size_t plane = p.out.w * p.out.d * p.rows;
  return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(plane, 1), 1, p.out.h);
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t k, ConvGeometry g, const char* axis) {
  const std::size_t padded = in + 2 * g.padding;
  if (padded < k) {
    throw ConfigError(std::string("conv3d: padded ") + axis + " extent " + std::to_string(padded) +
                      " is smaller than kernel " + std::to_string(k));
  }
  if ((padded - k) % g.stride != 0) {
    throw ConfigError(std::string("conv3d: output ") + axis + " size (" + std::to_string(in) +
                      " + 2*" + std::to_string(g.padding) + " - " + std::to_string(k) + ")/" +
                      std::to_string(g.stride) + " + 1 is not integral");
  }
  return (padded - k) / g.stride + 1;
}

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias, ConvGeometry geometry) {
  Tape<T>* tape = bias ? same_tape({input, weight, *bias}, "conv3d") : same_tape({input, weight}, "conv3d");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (geometry.stride == 0) throw ConfigError("conv3d: stride must be positive");
  const std::size_t k = ws.w;
  if (k % 2 == 0 || ws.d != k * k) {
    throw ConfigError("conv3d: kernel " + ws.str() + " is not [C_out, C_in, k, k*k] with odd k");
  }
  if (ws.h != xs.c) {
    throw ConfigError("conv3d: kernel expects " + std::to_string(ws.h) + " input channels, input is " +
                      xs.str());
  }
  if (bias && !is_vector(bias->shape(), ws.c)) {
    throw ConfigError("conv3d: bias " + bias->shape().str() + " does not match " +
                      std::to_string(ws.c) + " output channels");
  }
  ConvPlan p;
  p.in = xs;
  p.k = k;
  p.g = geometry;
  p.rows = xs.c * k * k * k;
  p.out = Shape{ws.c, conv_output_extent(xs.h, k, geometry, "H"), conv_output_extent(xs.w, k, geometry, "W"),
                conv_output_extent(xs.d, k, geometry, "D")};
  p.pointwise_fast = (k == 1 && geometry.stride == 1 && geometry.padding == 0);

  const std::size_t n_out = p.out.spatial();
  const std::size_t c_out = p.out.c;
  std::vector<T> out(p.out.numel());
  const T* x = input.value().raw();
  ConstMatMap<T> wmat(weight.value().raw(), static_cast<Eigen::Index>(c_out),
                      static_cast<Eigen::Index>(p.rows), Eigen::OuterStride<>(static_cast<Eigen::Index>(p.rows)));

  if (p.pointwise_fast) {
    ConstMatMap<T> xmat(x, static_cast<Eigen::Index>(xs.c), static_cast<Eigen::Index>(n_out),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(n_out)));
    MatMap<T> omat(out.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(n_out),
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(n_out)));
    omat.noalias() = wmat * xmat;
  } else {
    const std::size_t chunk = rows_per_chunk(p);
    const std::size_t plane = p.out.w * p.out.d;
    std::vector<T> col(p.rows * chunk * plane);
    for (std::size_t oh0 = 0; oh0 < p.out.h; oh0 += chunk) {
      const std::size_t oh1 = std::min(p.out.h, oh0 + chunk);
      const std::size_t n = (oh1 - oh0) * plane;
      im2col(x, p, oh0, oh1, col.data());
      ConstMatMap<T> cmat(col.data(), static_cast<Eigen::Index>(p.rows), static_cast<Eigen::Index>(n),
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(n)));
      MatMap<T> omat(out.data() + oh0 * plane, static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(n),
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(n_out)));
      omat.noalias() = wmat * cmat;
    }
  }
  if (bias) {
    const T* b = bias->value().raw();
    for (std::size_t co = 0; co < c_out; ++co) {
      T* o = out.data() + co * n_out;
      for (std::size_t i = 0; i < n_out; ++i) o[i] += b[co];
    }
  }

  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const Var<T> in_var = input;
  const Var<T> w_var = weight;
  auto backward = [p, in_var, w_var, has_bias = bias.has_value()](std::span<const T> gout,
                                                                 std::span<std::span<T>> gin) {
    const std::size_t n_out = p.out.spatial();
    const auto co = static_cast<Eigen::Index>(p.out.c);
    const auto rows = static_cast<Eigen::Index>(p.rows);
    const T* x = in_var.value().raw();
    ConstMatMap<T> wmat(w_var.value().raw(), co, rows, Eigen::OuterStride<>(rows));
    std::span<T> gx = gin[0];
    std::span<T> gw = gin[1];
    if (has_bias && !gin[2].empty()) {
      for (std::size_t c = 0; c < p.out.c; ++c) {
        const T* g = gout.data() + c * n_out;
        T acc = T(0);
        for (std::size_t i = 0; i < n_out; ++i) acc += g[i];
        gin[2][c] += acc;
      }
    }
    if (gx.empty() && gw.empty()) return;
    if (p.pointwise_fast) {
      const auto n = static_cast<Eigen::Index>(n_out);
      ConstMatMap<T> gmat(gout.data(), co, n, Eigen::OuterStride<>(n));
      if (!gw.empty()) {
        ConstMatMap<T> xmat(x, rows, n, Eigen::OuterStride<>(n));
        MatMap<T> gwmat(gw.data(), co, rows, Eigen::OuterStride<>(rows));
        gwmat.noalias() += gmat * xmat.transpose();
      }
      if (!gx.empty()) {
        MatMap<T> gxmat(gx.data(), rows, n, Eigen::OuterStride<>(n));
        gxmat.noalias() += wmat.transpose() * gmat;
      }
      return;
    }
    const std::size_t chunk = rows_per_chunk(p);
    const std::size_t plane = p.out.w * p.out.d;
    std::vector<T> col(p.rows * chunk * plane);
    for (std::size_t oh0 = 0; oh0 < p.out.h; oh0 += chunk) {
      const std::size_t oh1 = std::min(p.out.h, oh0 + chunk);
      const auto n = static_cast<Eigen::Index>((oh1 - oh0) * plane);
      ConstMatMap<T> gmat(gout.data() + oh0 * plane, co, n, Eigen::OuterStride<>(static_cast<Eigen::Index>(n_out)));
      if (!gw.empty()) {
        im2col(x, p, oh0, oh1, col.data());
        ConstMatMap<T> cmat(col.data(), rows, n, Eigen::OuterStride<>(n));
        MatMap<T> gwmat(gw.data(), co, rows, Eigen::OuterStride<>(rows));
        gwmat.noalias() += gmat * cmat.transpose();
      }
      if (!gx.empty()) {
        MatMap<T> cmat(col.data(), rows, n, Eigen::OuterStride<>(n));
        cmat.noalias() = wmat.transpose() * gmat;
        col2im(col.data(), p, oh0, oh1, gx.data());
      }
    }
  };
  return tape->record("conv3d", Tensor<T>(p.out, std::move(out)), std::span<const Var<T>>(inputs), backward);
}

template <typename T>
Var<T> avg_pool_axes(Var<T> input, KeepAxis keep_axis) {
  Tape<T>* tape = same_tape({input}, "avg_pool_axes");
  const Shape s = input.shape();
  Shape os{s.c, 1, 1, 1};
  switch (keep_axis) {
    case KeepAxis::none: break;
    case KeepAxis::h: os.h = s.h; break;
    case KeepAxis::w: os.w = s.w; break;
    case KeepAxis::d: os.d = s.d; break;
  }
  const auto st = broadcast_strides(os, s, "avg_pool_axes");
  const T inv = T(1) / static_cast<T>(s.numel() / os.numel());
  std::vector<T> acc(os.numel(), T(0));
  const T* x = input.value().raw();
  for_each_broadcast(s, st, [&](std::size_t o, std::size_t i) { acc[i] += x[o]; });
  for (auto& v : acc) v *= inv;
  auto backward = [s, st, inv](std::span<const T> gout, std::span<std::span<T>> gin) {
    std::span<T> gx = gin[0];
    for_each_broadcast(s, st, [&](std::size_t o, std::size_t i) { gx[o] += gout[i] * inv; });
  };
  return tape->record("avg_pool_axes", Tensor<T>(os, std::move(acc)), {input}, backward);
}

template <typename T>
Var<T> fc(Var<T> input, Var<T> weight, std::optional<Var<T>> bias) {
  Tape<T>* tape = bias ? same_tape({input, weight, *bias}, "fc") : same_tape({input, weight}, "fc");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.h != 1 || xs.w != 1 || xs.d != 1) throw ConfigError("fc: input must be a vector, got " + xs.str());
  if (ws.h != xs.c || ws.w != 1 || ws.d != 1) {
    throw ConfigError("fc: weight " + ws.str() + " does not map " + std::to_string(xs.c) + " inputs");
  }
  if (bias && !is_vector(bias->shape(), ws.c)) {
    throw ConfigError("fc: bias " + bias->shape().str() + " does not match " + std::to_string(ws.c) + " outputs");
  }
  const std::size_t n_in = xs.c;
  const std::size_t n_out = ws.c;
  const T* x = input.value().raw();
  const T* w = weight.value().raw();
  std::vector<T> out(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    T acc = bias ? bias->value()[o] : T(0);
    for (std::size_t i = 0; i < n_in; ++i) acc += w[o * n_in + i] * x[i];
    out[o] = acc;
  }
  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto backward = [input, weight, n_in, n_out, has_bias = bias.has_value()](std::span<const T> gout,
                                                                           std::span<std::span<T>> gin) {
    const T* x = input.value().raw();
    const T* w = weight.value().raw();
    for (std::size_t o = 0; o < n_out; ++o) {
      for (std::size_t i = 0; i < n_in; ++i) {
        if (!gin[0].empty()) gin[0][i] += w[o * n_in + i] * gout[o];
        if (!gin[1].empty()) gin[1][o * n_in + i] += gout[o] * x[i];
      }
      if (has_bias && !gin[2].empty()) gin[2][o] += gout[o];
    }
  };
  return tape->record("fc", Tensor<T>(vector_shape(n_out), std::move(out)), std::span<const Var<T>>(inputs),
                      backward);
}

template <typename T>
Var<T> pointwise(Var<T> input, Pointwise fn) {
  Tape<T>* tape = same_tape({input}, "pointwise");
  const auto x = input.value().data();
  std::vector<T> out(x.size());
  if (fn == Pointwise::relu) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
    // Branch on sign so exp never overflows.
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] >= T(0)) {
        out[i] = T(1) / (T(1) + std::exp(-x[i]));
      } else {
        const T e = std::exp(x[i]);
        out[i] = e / (T(1) + e);
      }
    }
  }
  Tensor<T> value(input.shape(), std::move(out));
  const char* name = fn == Pointwise::relu ? "relu" : "sigmoid";
  auto backward = [input, value, fn](std::span<const T> gout, std::span<std::span<T>> gin) {
    std::span<T> gx = gin[0];
    if (fn == Pointwise::relu) {
      const auto x = input.value().data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (x[i] > T(0)) gx[i] += gout[i];
      }
    } else {
      const auto y = value.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (T(1) - y[i]);
    }
  };
  return tape->record(name, value, {input}, backward);
}

template <typename T>
Var<T> mul_broadcast(Var<T> a, Var<T> b) {
  Tape<T>* tape = same_tape({a, b}, "mul_broadcast");
  const Shape s = a.shape();
  const auto st = broadcast_strides(b.shape(), s, "mul_broadcast");
  const T* x = a.value().raw();
  const T* y = b.value().raw();
  std::vector<T> out(s.numel());
  if (b.shape() == s) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  } else {
    for_each_broadcast(s, st, [&](std::size_t o, std::size_t i) { out[o] = x[o] * y[i]; });
  }
  auto backward = [a, b, s, st](std::span<const T> gout, std::span<std::span<T>> gin) {
    const T* x = a.value().raw();
    const T* y = b.value().raw();
    std::span<T> ga = gin[0];
    std::span<T> gb = gin[1];
    for_each_broadcast(s, st, [&](std::size_t o, std::size_t i) {
      if (!ga.empty()) ga[o] += gout[o] * y[i];
      if (!gb.empty()) gb[i] += gout[o] * x[o];
    });
  };
  return tape->record("mul_broadcast", Tensor<T>(s, std::move(out)), {a, b}, backward);
}

namespace {

template <typename T>
Var<T> add_n(std::initializer_list<Var<T>> vars, const char* op) {
  Tape<T>* tape = same_tape(vars, op);
  std::vector<Shape> shapes;
  for (const auto& v : vars) shapes.push_back(v.shape());
  Shape s = shapes[0];
  if (shapes.size() == 2) s = common_shape({shapes[0], shapes[1]}, op);
  if (shapes.size() == 3) s = common_shape({shapes[0], shapes[1], shapes[2]}, op);
  std::vector<std::array<std::size_t, 4>> strides;
  for (const auto& sh : shapes) strides.push_back(broadcast_strides(sh, s, op));
  std::vector<T> out(s.numel(), T(0));
  std::size_t k = 0;
  for (const auto& v : vars) {
    const T* x = v.value().raw();
    for_each_broadcast(s, strides[k++], [&](std::size_t o, std::size_t i) { out[o] += x[i]; });
  }
  auto backward = [s, strides](std::span<const T> gout, std::span<std::span<T>> gin) {
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (gin[k].empty()) continue;
      std::span<T> g = gin[k];
      for_each_broadcast(s, strides[k], [&](std::size_t o, std::size_t i) { g[i] += gout[o]; });
    }
  };
  return tape->record(op, Tensor<T>(s, std::move(out)), vars, backward);
}

}  // namespace

template <typename T>
Var<T> add_broadcast(Var<T> a, Var<T> b) {
  return add_n<T>({a, b}, "add_broadcast");
}

template <typename T>
Var<T> add_broadcast(Var<T> a, Var<T> b, Var<T> c) {
  return add_n<T>({a, b, c}, "add_broadcast");
}

template <typename T>
Var<T> instance_norm(Var<T> input, Var<T> gamma, Var<T> beta, double eps) {
  Tape<T>* tape = same_tape({input, gamma, beta}, "instance_norm");
  const Shape s = input.shape();
  if (s.spatial() < 2) throw ConfigError("instance_norm: needs H*W*D >= 2, got " + s.str());
  if (!is_vector(gamma.shape(), s.c) || !is_vector(beta.shape(), s.c)) {
    throw ConfigError("instance_norm: gamma/beta must be [" + std::to_string(s.c) + ",1,1,1]");
  }
  if (!(eps > 0.0)) throw ConfigError("instance_norm: eps must be positive");
  const std::size_t n = s.spatial();
  const T* x = input.value().raw();
  const T* g = gamma.value().raw();
  const T* b = beta.value().raw();
  std::vector<T> out(s.numel());
  std::vector<T> xhat(s.numel());
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    const T* xc = x + c * n;
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += xc[i];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[c] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = (xc[i] - mean) * is;
      xhat[c * n + i] = xh;
      out[c * n + i] = g[c] * xh + b[c];
    }
  }
  auto backward = [gamma, s, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      std::span<const T> gout, std::span<std::span<T>> gin) {
    const T* g = gamma.value().raw();
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* go = gout.data() + c * n;
      const T* xh = xhat.data() + c * n;
      T sum_g = T(0);
      T sum_gx = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += go[i];
        sum_gx += go[i] * xh[i];
      }
      if (!gin[1].empty()) gin[1][c] += sum_gx;
      if (!gin[2].empty()) gin[2][c] += sum_g;
      if (!gin[0].empty()) {
        // d/dx of gamma * xhat: (gamma * inv_std / n) * (n*g - sum(g) - xhat * sum(g*xhat)).
        const T coef = g[c] * inv_std[c] / static_cast<T>(n);
        T* gx = gin[0].data() + c * n;
        for (std::size_t i = 0; i < n; ++i) {
          gx[i] += coef * (static_cast<T>(n) * go[i] - sum_g - xh[i] * sum_gx);
        }
      }
    }
  };
  return tape->record("instance_norm", Tensor<T>(s, std::move(out)), {input, gamma, beta}, backward);
}

template <typename T>
Var<T> max_pool2(Var<T> input) {
  Tape<T>* tape = same_tape({input}, "max_pool2");
  const Shape s = input.shape();
  if (s.h % 2 || s.w % 2 || s.d % 2) throw ConfigError("max_pool2: spatial dims must be even, got " + s.str());
  const Shape os{s.c, s.h / 2, s.w / 2, s.d / 2};
  const T* x = input.value().raw();
  std::vector<T> out(os.numel());
  std::vector<std::size_t> argmax(os.numel());
  std::size_t o = 0;
  for (std::size_t c = 0; c < os.c; ++c) {
    for (std::size_t h = 0; h < os.h; ++h) {
      for (std::size_t w = 0; w < os.w; ++w) {
        for (std::size_t d = 0; d < os.d; ++d, ++o) {
          std::size_t best = s.offset(c, 2 * h, 2 * w, 2 * d);
          for (std::size_t dh = 0; dh < 2; ++dh) {
            for (std::size_t dw = 0; dw < 2; ++dw) {
              for (std::size_t dd = 0; dd < 2; ++dd) {
                const std::size_t idx = s.offset(c, 2 * h + dh, 2 * w + dw, 2 * d + dd);
                if (x[idx] > x[best]) best = idx;
              }
            }
          }
          argmax[o] = best;
          out[o] = x[best];
        }
      }
    }
  }
  auto backward = [argmax = std::move(argmax)](std::span<const T> gout, std::span<std::span<T>> gin) {
    for (std::size_t i = 0; i < gout.size(); ++i) gin[0][argmax[i]] += gout[i];
  };
  return tape->record("max_pool2", Tensor<T>(os, std::move(out)), {input}, backward);
}

template <typename T>
Var<T> upsample_nearest2(Var<T> input) {
  Tape<T>* tape = same_tape({input}, "upsample_nearest2");
  const Shape s = input.shape();
  const Shape os{s.c, s.h * 2, s.w * 2, s.d * 2};
  const T* x = input.value().raw();
  std::vector<T> out(os.numel());
  std::size_t o = 0;
  for (std::size_t c = 0; c < os.c; ++c) {
    for (std::size_t h = 0; h < os.h; ++h) {
      for (std::size_t w = 0; w < os.w; ++w) {
        const T* src = x + s.offset(c, h / 2, w / 2, 0);
        for (std::size_t d = 0; d < os.d; ++d, ++o) out[o] = src[d / 2];
      }
    }
  }
  auto backward = [s, os](std::span<const T> gout, std::span<std::span<T>> gin) {
    std::size_t o = 0;
    for (std::size_t c = 0; c < os.c; ++c) {
      for (std::size_t h = 0; h < os.h; ++h) {
        for (std::size_t w = 0; w < os.w; ++w) {
          T* dst = gin[0].data() + s.offset(c, h / 2, w / 2, 0);
          for (std::size_t d = 0; d < os.d; ++d, ++o) dst[d / 2] += gout[o];
        }
      }
    }
  };
  return tape->record("upsample_nearest2", Tensor<T>(os, std::move(out)), {input}, backward);
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>* tape = same_tape({a, b}, "concat_channels");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.h != sb.h || sa.w != sb.w || sa.d != sb.d) {
    throw ConfigError("concat_channels: spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  std::vector<T> out;
  out.reserve(sa.numel() + sb.numel());
  out.insert(out.end(), a.value().data().begin(), a.value().data().end());
  out.insert(out.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t na = sa.numel();
  auto backward = [na](std::span<const T> gout, std::span<std::span<T>> gin) {
    if (!gin[0].empty()) {
      for (std::size_t i = 0; i < na; ++i) gin[0][i] += gout[i];
    }
    if (!gin[1].empty()) {
      for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] += gout[na + i];
    }
  };
  return tape->record("concat_channels", Tensor<T>(Shape{sa.c + sb.c, sa.h, sa.w, sa.d}, std::move(out)),
                      {a, b}, backward);
}

template <typename T>
Var<T> sum(Var<T> input) {
  Tape<T>* tape = same_tape({input}, "sum");
  T acc = T(0);
  for (T v : input.value().data()) acc += v;
  auto backward = [](std::span<const T> gout, std::span<std::span<T>> gin) {
    for (auto& g : gin[0]) g += gout[0];
  };
  return tape->record("sum", Tensor<T>::scalar(acc), {input}, backward);
}

template <typename T>
Var<T> scale(Var<T> input, T factor) {
  Tape<T>* tape = same_tape({input}, "scale");
  std::vector<T> out = input.value().to_vector();
  for (auto& v : out) v *= factor;
  auto backward = [factor](std::span<const T> gout, std::span<std::span<T>> gin) {
    for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * factor;
  };
  return tape->record("scale", Tensor<T>(input.shape(), std::move(out)), {input}, backward);
}

#define RC3D_INSTANTIATE(T)                                                                     \
  template Var<T> conv3d<T>(Var<T>, Var<T>, std::optional<Var<T>>, ConvGeometry);               \
  template Var<T> avg_pool_axes<T>(Var<T>, KeepAxis);                                           \
  template Var<T> fc<T>(Var<T>, Var<T>, std::optional<Var<T>>);                                  \
  template Var<T> pointwise<T>(Var<T>, Pointwise);                                              \
  template Var<T> mul_broadcast<T>(Var<T>, Var<T>);                                             \
  template Var<T> add_broadcast<T>(Var<T>, Var<T>);                                             \
  template Var<T> add_broadcast<T>(Var<T>, Var<T>, Var<T>);                                     \
  template Var<T> instance_norm<T>(Var<T>, Var<T>, Var<T>, double);                             \
  template Var<T> max_pool2<T>(Var<T>);                                                         \
  template Var<T> upsample_nearest2<T>(Var<T>);                                                 \
  template Var<T> concat_channels<T>(Var<T>, Var<T>);                                           \
  template Var<T> sum<T>(Var<T>);                                                               \
  template Var<T> scale<T>(Var<T>, T);

RC3D_INSTANTIATE(float)
RC3D_INSTANTIATE(double)
#undef RC3D_INSTANTIATE

}  // namespace rc3d::ops
