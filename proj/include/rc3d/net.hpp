#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rc3d/json_util.hpp"
#include "rc3d/recalib.hpp"
#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

namespace rc3d::net {

enum class Recalib { none, cse, pe };

std::string to_string(Recalib r);
Recalib recalib_from_string(const std::string& name);

// Which block sites receive a recalibration block.
struct Placement {
  bool encoders = false;
  bool bottleneck = false;
  bool decoders = false;

  friend bool operator==(const Placement&, const Placement&) = default;
};

// "none" or P1..P6:
//   P1 encoders, P2 decoders, P3 bottleneck, P4 encoders+decoders,
//   P5 encoders+bottleneck, P6 encoders+bottleneck+decoders.
Placement placement_from_name(const std::string& name);
std::string placement_name(const Placement& p);
std::vector<std::string> placement_names();  // P1..P6

// Output widths of the 3x3x3 convs of one block, in order.
struct BlockSpec {
  std::vector<std::size_t> convs;
  [[nodiscard]] std::size_t out_channels() const { return convs.back(); }
  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct NetworkSpec {
  static constexpr std::size_t kDepth = 3;

  std::size_t in_channels = 1;
  std::vector<BlockSpec> encoders;
  BlockSpec bottleneck;
  std::vector<BlockSpec> decoders;
  std::vector<bool> downsample;  // per encoder: 2x2x2 max pool after the block
  std::vector<bool> upsample;    // per decoder: nearest x2 + 3x3x3 conv before the skip concat
  Recalib recalib = Recalib::none;
  Placement placement;
  std::size_t reduction = 2;
  bool recalib_bias = true;
  bool recalib_zero_init = false;
  std::size_t num_classes = 4;
  std::size_t kernel = 3;
  double norm_eps = 1e-5;
  // Set by variant_extra_encdec; relaxes the three-encoder constraint.
  bool allow_extra_depth = false;

  // Half-width 3D U-Net ladder: encoders {16,32} {32,64} {64,128},
  // bottleneck {128,256}, decoders {192,128} {64,64} {48,32}.
  static NetworkSpec full();
  // full() with every width divided by 4, sized for CPU training at 32^3.
  static NetworkSpec desk();

  // Copy with every conv width divided by `divisor` (must divide exactly).
  [[nodiscard]] NetworkSpec narrowed(std::size_t divisor) const;
  [[nodiscard]] NetworkSpec with_recalib(Recalib kind, Placement where) const;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  // Input H, W and D must be multiples of this.
  [[nodiscard]] std::size_t spatial_multiple() const;
  // Number of recalibration blocks the placement yields.
  [[nodiscard]] std::size_t recalib_sites() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

Json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const Json& j);
std::string canonical_text(const NetworkSpec& spec);
std::uint32_t spec_hash(const NetworkSpec& spec);

// Adds one 3x3x3 conv at the end of the second encoder and second decoder.
NetworkSpec variant_extra_conv(const NetworkSpec& spec);
// Adds an encoder after the last encoder and a decoder after the first decoder,
// both at the deepest resolution with the last encoder's width.
NetworkSpec variant_extra_encdec(const NetworkSpec& spec);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
  bool recalib = false;
};

template <typename T>
struct SiteTrace {
  std::string block;
  Var<T> block_output;  // after the block's last activation
  Var<T> output;        // after recalibration (== block_output without a block)
};

template <typename T>
struct ForwardPass {
  Var<T> logits;
  std::vector<Var<T>> params;  // aligned with Network::params()
  std::vector<SiteTrace<T>> sites;
};

template <typename T>
class Network {
 public:
  // Deterministic init: every parameter tensor is seeded from (seed, name), so
  // layers shared by two specs get identical values.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  // Restores a network from named parameters (e.g. a checkpoint).
  static Network from_params(const NetworkSpec& spec, std::vector<NamedParam<T>> params);

  [[nodiscard]] const NetworkSpec& spec() const { return spec_; }
  [[nodiscard]] const std::vector<NamedParam<T>>& params() const { return params_; }
  [[nodiscard]] std::vector<NamedParam<T>>& params() { return params_; }
  [[nodiscard]] std::size_t num_recalib_blocks() const;

  // Logits [num_classes, H, W, D] for input [in_channels, H, W, D].
  ForwardPass<T> forward(Tape<T>& tape, const Tensor<T>& input) const;

 private:
  struct ConvUnit {
    std::size_t weight;
    std::size_t gamma;
    std::size_t beta;
  };
  struct RecalibUnit {
    recalib::BlockKind kind;
    std::size_t w1;
    std::optional<std::size_t> b1;
    std::size_t w2;
    std::optional<std::size_t> b2;
  };
  struct Block {
    std::string name;
    std::vector<ConvUnit> convs;
    std::optional<RecalibUnit> recal;
  };
  struct Decoder {
    std::optional<ConvUnit> up;
    Block block;
  };

  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}
  void layout(std::uint64_t seed, bool initialize);
  std::size_t add_param(const std::string& name, Shape shape, bool is_recalib);
  ConvUnit add_conv(const std::string& name, std::size_t c_in, std::size_t c_out);
  Block add_block(const std::string& name, std::size_t c_in, const BlockSpec& spec, bool with_recalib);

  Var<T> run_conv(const ConvUnit& u, Var<T> x, const std::vector<Var<T>>& p) const;
  Var<T> run_block(const Block& b, Var<T> x, const std::vector<Var<T>>& p,
                   std::vector<SiteTrace<T>>& sites) const;

  NetworkSpec spec_;
  std::vector<NamedParam<T>> params_;
  std::vector<Shape> shapes_;
  std::vector<Block> encoders_;
  std::optional<Block> bottleneck_;
  std::vector<Decoder> decoders_;
  std::size_t classifier_weight_ = 0;
  std::size_t classifier_bias_ = 0;
};

struct LayerCount {
  std::string layer;
  std::size_t params = 0;
  bool recalib = false;
};

struct ParameterBreakdown {
  std::size_t total = 0;
  std::vector<LayerCount> per_layer;
  std::size_t recalib_total = 0;
  // recalib_total / (total - recalib_total)
  double recalib_fraction = 0.0;
};

template <typename T>
ParameterBreakdown count_parameters(const Network<T>& net);

}  // namespace rc3d::net
