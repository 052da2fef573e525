#include "rc3d/net.hpp"

#include <cmath>
#include <map>
#include <random>

#include "rc3d/error.hpp"
#include "rc3d/ops.hpp"
#include "rc3d/runtime.hpp"

namespace rc3d::net {

std::string to_string(Recalib r) {
  switch (r) {
    case Recalib::none: return "none";
    case Recalib::cse: return "cse";
    case Recalib::pe: return "pe";
  }
  return "none";
}

Recalib recalib_from_string(const std::string& name) {
  if (name == "none") return Recalib::none;
  if (name == "cse") return Recalib::cse;
  if (name == "pe") return Recalib::pe;
  throw ConfigError("unknown recalibration block '" + name + "' (valid: none, cse, pe)");
}

namespace {

const std::vector<std::pair<std::string, Placement>>& placement_table() {
  static const std::vector<std::pair<std::string, Placement>> table{
      {"P1", {true, false, false}}, {"P2", {false, false, true}}, {"P3", {false, true, false}},
      {"P4", {true, false, true}},  {"P5", {true, true, false}},  {"P6", {true, true, true}},
  };
  return table;
}

}  // namespace

Placement placement_from_name(const std::string& name) {
  if (name == "none") return {};
  for (const auto& [n, p] : placement_table()) {
    if (n == name) return p;
  }
  throw ConfigError("invalid placement '" + name + "' (valid: none, P1, P2, P3, P4, P5, P6)");
}

std::string placement_name(const Placement& p) {
  if (p == Placement{}) return "none";
  for (const auto& [n, q] : placement_table()) {
    if (q == p) return n;
  }
  return "none";
}

std::vector<std::string> placement_names() {
  std::vector<std::string> names;
  for (const auto& [n, _] : placement_table()) names.push_back(n);
  return names;
}

NetworkSpec NetworkSpec::full() {
  NetworkSpec s;
  s.encoders = {{{16, 32}}, {{32, 64}}, {{64, 128}}};
  s.bottleneck = {{128, 256}};
  s.decoders = {{{192, 128}}, {{64, 64}}, {{48, 32}}};
  s.downsample = {true, true, false};
  s.upsample = {false, true, true};
  return s;
}

NetworkSpec NetworkSpec::desk() { return full().narrowed(4); }

NetworkSpec NetworkSpec::narrowed(std::size_t divisor) const {
  if (divisor == 0) throw ConfigError("width divisor must be positive");
  NetworkSpec s = *this;
  auto shrink = [divisor](BlockSpec& b) {
    for (auto& c : b.convs) {
      if (c % divisor != 0) {
        throw ConfigError("width " + std::to_string(c) + " is not divisible by " + std::to_string(divisor));
      }
      c /= divisor;
    }
  };
  for (auto& b : s.encoders) shrink(b);
  shrink(s.bottleneck);
  for (auto& b : s.decoders) shrink(b);
  return s;
}

NetworkSpec NetworkSpec::with_recalib(Recalib kind, Placement where) const {
  NetworkSpec s = *this;
  s.recalib = kind;
  s.placement = kind == Recalib::none ? Placement{} : where;
  return s;
}

void NetworkSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid network spec: " + what); };
  if (in_channels == 0) fail("in_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (kernel % 2 == 0) fail("kernel must be odd");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  if (encoders.empty()) fail("at least one encoder is required");
  if (!allow_extra_depth && encoders.size() != kDepth) {
    fail("exactly 3 encoders are required, got " + std::to_string(encoders.size()));
  }
  if (!allow_extra_depth && decoders.size() != kDepth) {
    fail("exactly 3 decoders are required, got " + std::to_string(decoders.size()));
  }
  if (decoders.size() != encoders.size()) fail("encoder and decoder counts differ");
  if (downsample.size() != encoders.size()) fail("downsample mask length must equal the encoder count");
  if (upsample.size() != decoders.size()) fail("upsample mask length must equal the decoder count");
  for (std::size_t i = 0; i < downsample.size(); ++i) {
    if (downsample[i] != (i < 2)) fail("only encoders 1 and 2 may downsample");
  }
  const std::size_t n = encoders.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (upsample[j] != downsample[n - 1 - j]) {
      fail("decoder " + std::to_string(j + 1) + " upsampling must mirror encoder " + std::to_string(n - j));
    }
  }
  auto check_block = [&](const BlockSpec& b, const std::string& name) {
    if (b.convs.empty()) fail(name + " has no convolutions");
    for (auto c : b.convs) {
      if (c == 0) fail(name + " has a zero-width convolution");
    }
  };
  for (std::size_t i = 0; i < n; ++i) check_block(encoders[i], "encoder " + std::to_string(i + 1));
  check_block(bottleneck, "bottleneck");
  for (std::size_t i = 0; i < n; ++i) check_block(decoders[i], "decoder " + std::to_string(i + 1));
  if (recalib != Recalib::none) {
    if (reduction == 0) fail("reduction factor must be >= 1");
    auto check_site = [&](const BlockSpec& b, const std::string& name) {
      if (b.out_channels() % reduction != 0) {
        fail("reduction factor " + std::to_string(reduction) + " does not divide the " +
             std::to_string(b.out_channels()) + " channels of " + name);
      }
    };
    if (placement.encoders) {
      for (std::size_t i = 0; i < n; ++i) check_site(encoders[i], "encoder " + std::to_string(i + 1));
    }
    if (placement.bottleneck) check_site(bottleneck, "bottleneck");
    if (placement.decoders) {
      for (std::size_t i = 0; i < n; ++i) check_site(decoders[i], "decoder " + std::to_string(i + 1));
    }
  }
}

std::size_t NetworkSpec::spatial_multiple() const {
  std::size_t m = 1;
  for (bool d : downsample) m *= d ? 2 : 1;
  return m;
}

std::size_t NetworkSpec::recalib_sites() const {
  if (recalib == Recalib::none) return 0;
  return (placement.encoders ? encoders.size() : 0) + (placement.bottleneck ? 1 : 0) +
         (placement.decoders ? decoders.size() : 0);
}

namespace {

Json block_list(const std::vector<BlockSpec>& blocks) {
  Json arr = Json::array();
  for (const auto& b : blocks) arr.push_back(b.convs);
  return arr;
}

std::vector<BlockSpec> parse_blocks(const Json& j, const char* key) {
  if (!j.is_array()) throw ConfigError(std::string("network.") + key + ": expected a list of channel lists");
  std::vector<BlockSpec> out;
  for (const auto& b : j) {
    try {
      out.push_back(BlockSpec{b.get<std::vector<std::size_t>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("network.") + key + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

Json to_json(const NetworkSpec& s) {
  return Json{{"in_channels", s.in_channels},
              {"encoders", block_list(s.encoders)},
              {"bottleneck", s.bottleneck.convs},
              {"decoders", block_list(s.decoders)},
              {"downsample", s.downsample},
              {"upsample", s.upsample},
              {"recalib", to_string(s.recalib)},
              {"placement", placement_name(s.placement)},
              {"reduction", s.reduction},
              {"recalib_bias", s.recalib_bias},
              {"recalib_zero_init", s.recalib_zero_init},
              {"num_classes", s.num_classes},
              {"kernel", s.kernel},
              {"norm_eps", s.norm_eps},
              {"allow_extra_depth", s.allow_extra_depth}};
}

NetworkSpec network_spec_from_json(const Json& j) {
  require_known_keys(j,
                     {"preset", "width_divisor", "in_channels", "encoders", "bottleneck", "decoders", "downsample",
                      "upsample", "recalib", "placement", "reduction", "recalib_bias", "recalib_zero_init",
                      "num_classes", "kernel", "norm_eps", "allow_extra_depth"},
                     "network");
  std::string preset = "full";
  read_optional(j, "preset", preset, "network");
  NetworkSpec s;
  if (preset == "full") {
    s = NetworkSpec::full();
  } else if (preset == "desk") {
    s = NetworkSpec::desk();
  } else {
    throw ConfigError("network.preset: unknown preset '" + preset + "' (valid: full, desk)");
  }
  std::size_t divisor = 1;
  read_optional(j, "width_divisor", divisor, "network");
  if (divisor != 1) s = s.narrowed(divisor);
  read_optional(j, "in_channels", s.in_channels, "network");
  if (j.contains("encoders")) s.encoders = parse_blocks(j["encoders"], "encoders");
  if (j.contains("bottleneck")) s.bottleneck = parse_blocks(Json::array({j["bottleneck"]}), "bottleneck")[0];
  if (j.contains("decoders")) s.decoders = parse_blocks(j["decoders"], "decoders");
  read_optional(j, "downsample", s.downsample, "network");
  read_optional(j, "upsample", s.upsample, "network");
  std::string recal = to_string(s.recalib);
  read_optional(j, "recalib", recal, "network");
  s.recalib = recalib_from_string(recal);
  std::string place = placement_name(s.placement);
  read_optional(j, "placement", place, "network");
  s.placement = placement_from_name(place);
  read_optional(j, "reduction", s.reduction, "network");
  read_optional(j, "recalib_bias", s.recalib_bias, "network");
  read_optional(j, "recalib_zero_init", s.recalib_zero_init, "network");
  read_optional(j, "num_classes", s.num_classes, "network");
  read_optional(j, "kernel", s.kernel, "network");
  read_optional(j, "norm_eps", s.norm_eps, "network");
  read_optional(j, "allow_extra_depth", s.allow_extra_depth, "network");
  s.validate();
  return s;
}

std::string canonical_text(const NetworkSpec& spec) { return rc3d::canonical_text(to_json(spec)); }

std::uint32_t spec_hash(const NetworkSpec& spec) { return crc32(canonical_text(spec)); }

NetworkSpec variant_extra_conv(const NetworkSpec& spec) {
  NetworkSpec s = spec;
  if (s.encoders.size() < 2 || s.decoders.size() < 2) throw ConfigError("extra-conv variant needs two encoders");
  s.encoders[1].convs.push_back(s.encoders[1].out_channels());
  s.decoders[1].convs.push_back(s.decoders[1].out_channels());
  return s;
}

NetworkSpec variant_extra_encdec(const NetworkSpec& spec) {
  NetworkSpec s = spec;
  const std::size_t width = s.encoders.back().out_channels();
  s.encoders.push_back(BlockSpec{{width, width}});
  s.downsample.push_back(false);
  s.decoders.insert(s.decoders.begin() + 1, BlockSpec{{width, width}});
  s.upsample.insert(s.upsample.begin() + 1, false);
  s.allow_extra_depth = true;
  return s;
}

template <typename T>
std::size_t Network<T>::add_param(const std::string& name, Shape shape, bool is_recalib) {
  params_.push_back(NamedParam<T>{name, Tensor<T>::zeros(shape), is_recalib});
  shapes_.push_back(shape);
  return params_.size() - 1;
}

template <typename T>
typename Network<T>::ConvUnit Network<T>::add_conv(const std::string& name, std::size_t c_in, std::size_t c_out) {
  const std::size_t k = spec_.kernel;
  ConvUnit u{};
  u.weight = add_param(name + ".weight", ops::kernel_shape(c_out, c_in, k), false);
  u.gamma = add_param(name + ".gamma", ops::vector_shape(c_out), false);
  u.beta = add_param(name + ".beta", ops::vector_shape(c_out), false);
  return u;
}

template <typename T>
typename Network<T>::Block Network<T>::add_block(const std::string& name, std::size_t c_in, const BlockSpec& b,
                                                 bool with_recalib) {
  Block block;
  block.name = name;
  std::size_t c = c_in;
  for (std::size_t i = 0; i < b.convs.size(); ++i) {
    block.convs.push_back(add_conv(name + ".conv" + std::to_string(i + 1), c, b.convs[i]));
    c = b.convs[i];
  }
  if (with_recalib && spec_.recalib != Recalib::none) {
    const auto kind = spec_.recalib == Recalib::cse ? recalib::BlockKind::cse : recalib::BlockKind::pe;
    const std::size_t reduced = recalib::ReductionFactor(spec_.reduction).reduce(c);
    const std::string prefix = name + "." + recalib::to_string(kind);
    RecalibUnit r{kind, 0, std::nullopt, 0, std::nullopt};
    r.w1 = add_param(prefix + ".w1", ops::matrix_shape(reduced, c), true);
    if (spec_.recalib_bias) r.b1 = add_param(prefix + ".b1", ops::vector_shape(reduced), true);
    r.w2 = add_param(prefix + ".w2", ops::matrix_shape(c, reduced), true);
    if (spec_.recalib_bias) r.b2 = add_param(prefix + ".b2", ops::vector_shape(c), true);
    block.recal = r;
  }
  return block;
}

template <typename T>
void Network<T>::layout(std::uint64_t seed, bool initialize) {
  const std::size_t n = spec_.encoders.size();
  std::vector<std::size_t> skip_channels;
  std::size_t c = spec_.in_channels;
  for (std::size_t i = 0; i < n; ++i) {
    encoders_.push_back(add_block("enc" + std::to_string(i + 1), c, spec_.encoders[i], spec_.placement.encoders));
    c = spec_.encoders[i].out_channels();
    skip_channels.push_back(c);
  }
  bottleneck_ = add_block("bottleneck", c, spec_.bottleneck, spec_.placement.bottleneck);
  c = spec_.bottleneck.out_channels();
  for (std::size_t j = 0; j < n; ++j) {
    Decoder dec;
    const std::string name = "dec" + std::to_string(j + 1);
    if (spec_.upsample[j]) dec.up = add_conv(name + ".up", c, c);
    dec.block = add_block(name, skip_channels[n - 1 - j] + c, spec_.decoders[j], spec_.placement.decoders);
    c = spec_.decoders[j].out_channels();
    decoders_.push_back(std::move(dec));
  }
  classifier_weight_ = add_param("classifier.weight", ops::kernel_shape(spec_.num_classes, c, 1), false);
  classifier_bias_ = add_param("classifier.bias", ops::vector_shape(spec_.num_classes), false);
  if (!initialize) return;

  // Value init, one stream per parameter name.
  for (auto& p : params_) {
    const Shape s = p.value.shape();
    const std::string& name = p.name;
    auto ends_with = [&](const char* suffix) {
      const std::string sfx(suffix);
      return name.size() >= sfx.size() && name.compare(name.size() - sfx.size(), sfx.size(), sfx) == 0;
    };
    if (p.recalib) continue;
    std::mt19937_64 rng(derive_seed(seed, name));
    std::vector<T> v(s.numel(), T(0));
    if (ends_with(".gamma")) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (ends_with(".weight")) {
      const std::size_t fan_in = s.h * s.w * s.d;
      // He-uniform for ReLU convs, LeCun-uniform for the linear classifier.
      const double bound = name == "classifier.weight" ? 1.0 / std::sqrt(static_cast<double>(fan_in))
                                                       : std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& x : v) x = static_cast<T>(dist(rng));
    }
    p.value = Tensor<T>(s, std::move(v));
  }
  std::vector<const Block*> blocks;
  for (const auto& b : encoders_) blocks.push_back(&b);
  blocks.push_back(&*bottleneck_);
  for (const auto& d : decoders_) blocks.push_back(&d.block);
  for (const Block* b : blocks) {
    if (!b->recal) continue;
    const RecalibUnit& r = *b->recal;
    const auto init = recalib::init_block<T>(r.kind, shapes_[r.w1].h, recalib::ReductionFactor(spec_.reduction),
                                             derive_seed(seed, b->name), {spec_.recalib_bias, spec_.recalib_zero_init});
    params_[r.w1].value = init.weights.w1;
    params_[r.w2].value = init.weights.w2;
    if (r.b1) params_[*r.b1].value = *init.weights.b1;
    if (r.b2) params_[*r.b2].value = *init.weights.b2;
  }
}

template <typename T>
Network<T> Network<T>::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net(spec);
  net.layout(seed, true);
  return net;
}

template <typename T>
Network<T> Network<T>::from_params(const NetworkSpec& spec, std::vector<NamedParam<T>> params) {
  spec.validate();
  Network net(spec);
  net.layout(0, false);
  if (params.size() != net.params_.size()) {
    throw InputError("parameter count mismatch: expected " + std::to_string(net.params_.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != net.params_[i].name || params[i].value.shape() != net.shapes_[i]) {
      throw InputError("parameter '" + params[i].name + "' " + params[i].value.shape().str() + " does not match '" +
                       net.params_[i].name + "' " + net.shapes_[i].str());
    }
    net.params_[i].value = std::move(params[i].value);
  }
  return net;
}

template <typename T>
std::size_t Network<T>::num_recalib_blocks() const {
  std::size_t n = bottleneck_ && bottleneck_->recal ? 1 : 0;
  for (const auto& b : encoders_) n += b.recal ? 1 : 0;
  for (const auto& d : decoders_) n += d.block.recal ? 1 : 0;
  return n;
}

template <typename T>
Var<T> Network<T>::run_conv(const ConvUnit& u, Var<T> x, const std::vector<Var<T>>& p) const {
  const std::size_t pad = spec_.kernel / 2;
  const Var<T> y = ops::conv3d<T>(x, p[u.weight], std::nullopt, {1, pad});
  return ops::relu(ops::instance_norm(y, p[u.gamma], p[u.beta], spec_.norm_eps));
}

template <typename T>
Var<T> Network<T>::run_block(const Block& b, Var<T> x, const std::vector<Var<T>>& p,
                             std::vector<SiteTrace<T>>& sites) const {
  for (const auto& u : b.convs) x = run_conv(u, x, p);
  Var<T> out = x;
  if (b.recal) {
    const RecalibUnit& r = *b.recal;
    recalib::BlockVars<T> vars{p[r.w1], std::nullopt, p[r.w2], std::nullopt};
    if (r.b1) vars.b1 = p[*r.b1];
    if (r.b2) vars.b2 = p[*r.b2];
    out = recalib::forward(r.kind, x, vars);
  }
  sites.push_back(SiteTrace<T>{b.name, x, out});
  return out;
}

template <typename T>
ForwardPass<T> Network<T>::forward(Tape<T>& tape, const Tensor<T>& input) const {
  const Shape s = input.shape();
  if (s.c != spec_.in_channels) {
    throw InputError("network expects " + std::to_string(spec_.in_channels) + " input channels, got " + s.str());
  }
  const std::size_t m = spec_.spatial_multiple();
  if (s.h % m || s.w % m || s.d % m) {
    throw InputError("input spatial dims " + s.str() + " must be multiples of " + std::to_string(m));
  }
  ForwardPass<T> pass;
  pass.params.reserve(params_.size());
  for (const auto& p : params_) pass.params.push_back(tape.leaf(p.value));
  const auto& p = pass.params;

  Var<T> x = tape.constant(input);
  std::vector<Var<T>> skips;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    x = run_block(encoders_[i], x, p, pass.sites);
    skips.push_back(x);
    if (spec_.downsample[i]) x = ops::max_pool2(x);
  }
  x = run_block(*bottleneck_, x, p, pass.sites);
  const std::size_t n = decoders_.size();
  for (std::size_t j = 0; j < n; ++j) {
    const Decoder& dec = decoders_[j];
    if (dec.up) x = run_conv(*dec.up, ops::upsample_nearest2(x), p);
    x = ops::concat_channels(skips[n - 1 - j], x);
    x = run_block(dec.block, x, p, pass.sites);
  }
  pass.logits = ops::conv3d<T>(x, p[classifier_weight_], p[classifier_bias_], {1, 0});
  return pass;
}

template <typename T>
ParameterBreakdown count_parameters(const Network<T>& net) {
  ParameterBreakdown b;
  std::map<std::string, std::size_t> index;
  for (const auto& p : net.params()) {
    const std::string layer = p.name.substr(0, p.name.rfind('.'));
    auto it = index.find(layer);
    if (it == index.end()) {
      it = index.emplace(layer, b.per_layer.size()).first;
      b.per_layer.push_back(LayerCount{layer, 0, p.recalib});
    }
    b.per_layer[it->second].params += p.value.numel();
    b.total += p.value.numel();
    if (p.recalib) b.recalib_total += p.value.numel();
  }
  const std::size_t base = b.total - b.recalib_total;
  b.recalib_fraction = base == 0 ? 0.0 : static_cast<double>(b.recalib_total) / static_cast<double>(base);
  return b;
}

template class Network<float>;
template class Network<double>;
template ParameterBreakdown count_parameters<float>(const Network<float>&);
template ParameterBreakdown count_parameters<double>(const Network<double>&);

}  // namespace rc3d::net
