#include "rc3d/recalib.hpp"

#include <cmath>

#include "rc3d/error.hpp"
#include "rc3d/runtime.hpp"

namespace rc3d::recalib {

std::string to_string(BlockKind kind) { return kind == BlockKind::cse ? "cse" : "pe"; }

ReductionFactor::ReductionFactor(std::size_t r) : r_(r) {
  if (r == 0) throw ConfigError("reduction factor must be a positive integer");
}

std::size_t ReductionFactor::reduce(std::size_t channels) const {
  if (channels == 0 || channels % r_ != 0) {
    throw ConfigError("reduction factor " + std::to_string(r_) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  return channels / r_;
}

template <typename T>
std::size_t BlockParams<T>::numel() const {
  std::size_t n = weights.w1.numel() + weights.w2.numel();
  if (weights.b1) n += weights.b1->numel();
  if (weights.b2) n += weights.b2->numel();
  return n;
}

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(shape, std::move(v));
}

}  // namespace

template <typename T>
BlockParams<T> init_block(BlockKind kind, std::size_t channels, ReductionFactor r, std::uint64_t seed,
                          InitOptions options) {
  const std::size_t reduced = r.reduce(channels);
  std::mt19937_64 rng(derive_seed(seed, "recalib/" + to_string(kind)));
  BlockParams<T> p;
  p.kind = kind;
  p.channels = channels;
  p.reduction = r.value();
  p.weights.w1 = uniform<T>(ops::matrix_shape(reduced, channels), channels, rng);
  if (options.with_bias) p.weights.b1 = uniform<T>(ops::vector_shape(reduced), channels, rng);
  if (options.zero_final) {
    p.weights.w2 = Tensor<T>::zeros(ops::matrix_shape(channels, reduced));
    if (options.with_bias) p.weights.b2 = Tensor<T>::zeros(ops::vector_shape(channels));
  } else {
    p.weights.w2 = uniform<T>(ops::matrix_shape(channels, reduced), reduced, rng);
    if (options.with_bias) p.weights.b2 = uniform<T>(ops::vector_shape(channels), reduced, rng);
  }
  return p;
}

template <typename T>
BlockVars<T> bind(Tape<T>& tape, const BlockParams<T>& params) {
  BlockVars<T> v{tape.leaf(params.weights.w1), std::nullopt, tape.leaf(params.weights.w2), std::nullopt};
  if (params.weights.b1) v.b1 = tape.leaf(*params.weights.b1);
  if (params.weights.b2) v.b2 = tape.leaf(*params.weights.b2);
  return v;
}

namespace {

template <typename T>
void check_channels(const char* op, Var<T> u, const BlockVars<T>& p) {
  const std::size_t c = u.shape().c;
  const Shape w1 = p.w1.shape();
  const Shape w2 = p.w2.shape();
  if (w1.h != c || w2.c != c || w2.h != w1.c) {
    throw ConfigError(std::string(op) + ": block built for " + std::to_string(w1.h) +
                      " channels applied to input " + u.shape().str());
  }
}

}  // namespace

template <typename T>
Var<T> cse_forward(Var<T> u, const BlockVars<T>& p) {
  check_channels("cse_forward", u, p);
  const Var<T> z = ops::avg_pool_axes(u, ops::KeepAxis::none);
  const Var<T> hidden = ops::relu(ops::fc(z, p.w1, p.b1));
  const Var<T> gate = ops::sigmoid(ops::fc(hidden, p.w2, p.b2));
  return ops::mul_broadcast(u, gate);
}

template <typename T>
Var<T> pe_project(Var<T> u) {
  const Var<T> zh = ops::avg_pool_axes(u, ops::KeepAxis::h);
  const Var<T> zw = ops::avg_pool_axes(u, ops::KeepAxis::w);
  const Var<T> zd = ops::avg_pool_axes(u, ops::KeepAxis::d);
  return ops::add_broadcast(zh, zw, zd);
}

template <typename T>
Var<T> pe_forward(Var<T> u, const BlockVars<T>& p) {
  check_channels("pe_forward", u, p);
  const Var<T> z = pe_project(u);
  const Var<T> hidden = ops::relu(ops::conv3d(z, p.w1, p.b1));
  const Var<T> gate = ops::sigmoid(ops::conv3d(hidden, p.w2, p.b2));
  return ops::mul_broadcast(u, gate);
}

template <typename T>
Var<T> forward(BlockKind kind, Var<T> u, const BlockVars<T>& p) {
  return kind == BlockKind::cse ? cse_forward(u, p) : pe_forward(u, p);
}

std::size_t param_count(BlockKind /*kind*/, std::size_t channels, ReductionFactor r, bool with_bias) {
  const std::size_t reduced = r.reduce(channels);
  return 2 * channels * reduced + (with_bias ? reduced + channels : 0);
}

#define RC3D_INSTANTIATE(T)                                                                      \
  template struct BlockParams<T>;                                                                \
  template BlockParams<T> init_block<T>(BlockKind, std::size_t, ReductionFactor, std::uint64_t, \
                                        InitOptions);                                           \
  template BlockVars<T> bind<T>(Tape<T>&, const BlockParams<T>&);                                \
  template Var<T> cse_forward<T>(Var<T>, const BlockVars<T>&);                                   \
  template Var<T> pe_project<T>(Var<T>);                                                         \
  template Var<T> pe_forward<T>(Var<T>, const BlockVars<T>&);                                    \
  template Var<T> forward<T>(BlockKind, Var<T>, const BlockVars<T>&);

RC3D_INSTANTIATE(float)
RC3D_INSTANTIATE(double)
#undef RC3D_INSTANTIATE

}  // namespace rc3d::recalib
