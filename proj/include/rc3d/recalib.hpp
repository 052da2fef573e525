#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rc3d/ops.hpp"
#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

// Channel squeeze & excite (cSE) and project & excite (PE) recalibration
// blocks for volumetric feature maps.
namespace rc3d::recalib {

enum class BlockKind { cse, pe };

std::string to_string(BlockKind kind);

// Channel bottleneck ratio of the excitation layers.
class ReductionFactor {
 public:
  explicit ReductionFactor(std::size_t r);
  [[nodiscard]] std::size_t value() const { return r_; }
  // Reduced channel count C / r; throws ConfigError unless r divides C.
  [[nodiscard]] std::size_t reduce(std::size_t channels) const;

 private:
  std::size_t r_;
};

// Excitation weights shared by both block kinds. For cSE the weights act as
// fully-connected layers on the pooled vector; for PE they are 1x1x1 convs.
// Both store w1 as [C/r, C, 1, 1] and w2 as [C, C/r, 1, 1], which is also the
// kernel layout of a 1x1x1 convolution.
template <typename P>
struct ExcitationWeights {
  P w1;
  std::optional<P> b1;
  P w2;
  std::optional<P> b2;
};

template <typename T>
struct BlockParams {
  BlockKind kind = BlockKind::pe;
  std::size_t channels = 0;
  std::size_t reduction = 2;
  ExcitationWeights<Tensor<T>> weights;

  [[nodiscard]] std::size_t numel() const;
};

template <typename T>
using CseParams = BlockParams<T>;
template <typename T>
using PeParams = BlockParams<T>;

template <typename T>
using BlockVars = ExcitationWeights<Var<T>>;

struct InitOptions {
  bool with_bias = true;
  // Zero the second excitation layer so a fresh block gates every element by
  // sigmoid(0) = 0.5.
  bool zero_final = false;
};

// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded.
template <typename T>
BlockParams<T> init_block(BlockKind kind, std::size_t channels, ReductionFactor r, std::uint64_t seed,
                          InitOptions options = {});

// Registers the block parameters as tape leaves.
template <typename T>
BlockVars<T> bind(Tape<T>& tape, const BlockParams<T>& params);

// u_hat_c = sigmoid(w2 relu(w1 z + b1) + b2)_c * u_c with z the per-channel mean.
template <typename T>
Var<T> cse_forward(Var<T> u, const BlockVars<T>& p);

// Z[c,i,j,k] = z_h_c(i) + z_w_c(j) + z_d_c(k) with each profile an average over
// the two remaining spatial axes. The profiles are broadcast, never tiled.
template <typename T>
Var<T> pe_project(Var<T> u);

// u_hat = sigmoid(v2 * relu(v1 * Z + b1) + b2) (.) u with 1x1x1 convs v1, v2.
template <typename T>
Var<T> pe_forward(Var<T> u, const BlockVars<T>& p);

template <typename T>
Var<T> forward(BlockKind kind, Var<T> u, const BlockVars<T>& p);

// Trainable scalars of one block: 2C^2/r (+ C/r + C with biases). Equal for
// both kinds.
std::size_t param_count(BlockKind kind, std::size_t channels, ReductionFactor r, bool with_bias);

}  // namespace rc3d::recalib
