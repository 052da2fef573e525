#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "rc3d/error.hpp"
#include "rc3d/recalib.hpp"
#include "test_util.hpp"

using namespace rc3d;
using oracle::Vec;

namespace {

oracle::Excite to_oracle(const recalib::BlockParams<double>& p) {
  oracle::Excite e;
  e.c = p.channels;
  e.cr = p.channels / p.reduction;
  e.w1 = p.weights.w1.to_vector();
  e.w2 = p.weights.w2.to_vector();
  if (p.weights.b1) e.b1 = p.weights.b1->to_vector();
  if (p.weights.b2) e.b2 = p.weights.b2->to_vector();
  return e;
}

Tensor<double> apply(recalib::BlockKind kind, const recalib::BlockParams<double>& p, const Tensor<double>& u) {
  Tape<double> tape;
  return recalib::forward(kind, tape.leaf(u), recalib::bind(tape, p)).value();
}

}  // namespace

TEST(Recalib, ForwardMatchesTranscriptionOnRandomCases) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> hdim(1, 6), wdim(1, 5), ddim(1, 7);
  double worst_cse = 0, worst_pe = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = std::array<std::size_t, 3>{1, 2, 4}[trial % 3];
    std::uniform_int_distribution<std::size_t> mult(1, 4 / r);
    const Shape s{r * mult(rng), hdim(rng), wdim(rng), ddim(rng)};
    const bool bias = trial % 5 != 0;
    const auto u = oracle::random_tensor(s, rng, -2, 2);
    for (auto kind : {recalib::BlockKind::cse, recalib::BlockKind::pe}) {
      const auto params = recalib::init_block<double>(kind, s.c, recalib::ReductionFactor(r),
                                                      static_cast<std::uint64_t>(trial), {bias, false});
      const Vec got = apply(kind, params, u).to_vector();
      const Vec ref = kind == recalib::BlockKind::cse ? oracle::cse(u.to_vector(), s, to_oracle(params))
                                                      : oracle::pe(u.to_vector(), s, to_oracle(params));
      (kind == recalib::BlockKind::cse ? worst_cse : worst_pe) =
          std::max(kind == recalib::BlockKind::cse ? worst_cse : worst_pe, oracle::max_abs(got, ref));
    }
  }
  EXPECT_LT(worst_cse, 1e-6);
  EXPECT_LT(worst_pe, 1e-6);
}

TEST(Recalib, ProjectionMatchesAxisAverages) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const Shape s{dim(rng), dim(rng), dim(rng), dim(rng)};
    const auto u = oracle::random_tensor(s, rng);
    Tape<double> tape;
    const Vec z = recalib::pe_project(tape.leaf(u)).value().to_vector();
    EXPECT_LT(oracle::max_abs(z, oracle::pe_projection(u.to_vector(), s)), 1e-12);
  }
}

TEST(Recalib, ProjectionMeansEqualGlobalMean) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 7);
    const Shape s{dim(rng), dim(rng), dim(rng), dim(rng)};
    const auto u = oracle::random_tensor(s, rng, -3, 3);
    Tape<double> tape;
    const auto x = tape.leaf(u);
    const auto zh = ops::avg_pool_axes(x, ops::KeepAxis::h).value();
    const auto zw = ops::avg_pool_axes(x, ops::KeepAxis::w).value();
    const auto zd = ops::avg_pool_axes(x, ops::KeepAxis::d).value();
    const Vec g = oracle::global_mean(u.to_vector(), s);
    for (std::size_t c = 0; c < s.c; ++c) {
      double mh = 0, mw = 0, md = 0;
      for (std::size_t i = 0; i < s.h; ++i) mh += zh[c * s.h + i];
      for (std::size_t j = 0; j < s.w; ++j) mw += zw[c * s.w + j];
      for (std::size_t k = 0; k < s.d; ++k) md += zd[c * s.d + k];
      EXPECT_NEAR(mh / s.h, g[c], 1e-6);
      EXPECT_NEAR(mw / s.w, g[c], 1e-6);
      EXPECT_NEAR(md / s.d, g[c], 1e-6);
    }
  }
}

TEST(Recalib, ParameterCountsAgreeAcrossKinds) {
  for (std::size_t c : {4, 16, 64, 256}) {
    for (std::size_t r : {1, 2, 4}) {
      const recalib::ReductionFactor rf(r);
      EXPECT_EQ(recalib::param_count(recalib::BlockKind::cse, c, rf, true),
                recalib::param_count(recalib::BlockKind::pe, c, rf, true));
      EXPECT_EQ(recalib::param_count(recalib::BlockKind::pe, c, rf, true), 2 * c * c / r + c / r + c);
      EXPECT_EQ(recalib::param_count(recalib::BlockKind::pe, c, rf, false), 2 * c * c / r);
      const auto p = recalib::init_block<double>(recalib::BlockKind::pe, c, rf, 1);
      EXPECT_EQ(p.numel(), recalib::param_count(recalib::BlockKind::pe, c, rf, true));
    }
  }
}

TEST(Recalib, ReductionMustDivideChannels) {
  EXPECT_THROW(recalib::ReductionFactor(0), ConfigError);
  EXPECT_THROW((void)recalib::ReductionFactor(4).reduce(6), ConfigError);
  EXPECT_EQ(recalib::ReductionFactor(2).reduce(6), 3u);
  EXPECT_THROW(recalib::init_block<double>(recalib::BlockKind::pe, 6, recalib::ReductionFactor(4), 1), ConfigError);
}

TEST(Recalib, PreservesShapeAndGatesStayInOpenInterval) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    const Shape s{2 * dim(rng), dim(rng), dim(rng), dim(rng)};
    const auto u = oracle::random_tensor(s, rng, 0.25, 2.0);
    for (auto kind : {recalib::BlockKind::cse, recalib::BlockKind::pe}) {
      const auto p = recalib::init_block<double>(kind, s.c, recalib::ReductionFactor(2), static_cast<std::uint64_t>(trial));
      const auto y = apply(kind, p, u);
      ASSERT_EQ(y.shape(), s);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        const double g = y[i] / u[i];
        EXPECT_GT(g, 0.0);
        EXPECT_LT(g, 1.0);
      }
    }
  }
}

TEST(Recalib, ZeroFinalLayerGivesHalfGate) {
  std::mt19937_64 rng(25);
  const auto u = oracle::random_tensor({4, 3, 2, 2}, rng);
  const auto p = recalib::init_block<double>(recalib::BlockKind::pe, 4, recalib::ReductionFactor(2), 5, {true, true});
  const auto y = apply(recalib::BlockKind::pe, p, u);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.5 * u[i]);
}

TEST(Recalib, InitIsSeededAndDeterministic) {
  const auto a = recalib::init_block<float>(recalib::BlockKind::pe, 8, recalib::ReductionFactor(2), 42);
  const auto b = recalib::init_block<float>(recalib::BlockKind::pe, 8, recalib::ReductionFactor(2), 42);
  const auto c = recalib::init_block<float>(recalib::BlockKind::pe, 8, recalib::ReductionFactor(2), 43);
  EXPECT_TRUE(a.weights.w1.bitwise_equal(b.weights.w1));
  EXPECT_FALSE(a.weights.w1.bitwise_equal(c.weights.w1));
  const double bound = 1.0 / std::sqrt(8.0);
  for (float v : a.weights.w1.data()) EXPECT_LE(std::abs(v), bound);
}

namespace {

Tensor<double> swap_hw(const Tensor<double>& u) {
  const Shape s = u.shape();
  std::vector<double> out(s.numel());
  const Shape o{s.c, s.w, s.h, s.d};
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j)
        for (std::size_t k = 0; k < s.d; ++k) out[o.offset(c, j, i, k)] = u.at(c, i, j, k);
  return {o, out};
}

Tensor<double> dyadic(Shape s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> q(-16, 16);
  std::vector<double> v(s.numel());
  for (auto& x : v) x = q(rng) / 8.0;
  return {s, v};
}

}  // namespace

TEST(Recalib, PeIsEquivariantToAxisPermutation) {
  std::mt19937_64 rng(26);
  const auto p = recalib::init_block<double>(recalib::BlockKind::pe, 4, recalib::ReductionFactor(2), 3);
  const auto u = dyadic({4, 2, 4, 1}, rng);
  const auto lhs = apply(recalib::BlockKind::pe, p, swap_hw(u));
  const auto rhs = swap_hw(apply(recalib::BlockKind::pe, p, u));
  EXPECT_TRUE(lhs.bitwise_equal(rhs));
}

TEST(Recalib, VoxelShuffleSeparatesCseFromPe) {
  std::mt19937_64 rng(27);
  const Shape s{4, 4, 4, 4};
  const auto u = dyadic(s, rng);
  std::vector<std::size_t> pi(s.spatial());
  std::iota(pi.begin(), pi.end(), std::size_t{0});
  std::shuffle(pi.begin(), pi.end(), rng);
  auto shuffle = [&](const Tensor<double>& t) {
    std::vector<double> v(t.numel());
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.spatial(); ++i) v[c * s.spatial() + i] = t[c * s.spatial() + pi[i]];
    return Tensor<double>(s, v);
  };
  const auto cse = recalib::init_block<double>(recalib::BlockKind::cse, 4, recalib::ReductionFactor(2), 3);
  const auto pe = recalib::init_block<double>(recalib::BlockKind::pe, 4, recalib::ReductionFactor(2), 3);
  EXPECT_TRUE(apply(recalib::BlockKind::cse, cse, shuffle(u)).bitwise_equal(shuffle(apply(recalib::BlockKind::cse, cse, u))));
  EXPECT_GT(oracle::max_abs(apply(recalib::BlockKind::pe, pe, shuffle(u)).to_vector(),
                            shuffle(apply(recalib::BlockKind::pe, pe, u)).to_vector()),
            1e-3);
}

TEST(Recalib, BlockGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(28);
  for (bool bias : {true, false}) {
    std::vector<Tensor<double>> inputs{oracle::random_tensor({4, 3, 2, 3}, rng),
                                       oracle::random_tensor(ops::matrix_shape(2, 4), rng),
                                       oracle::random_tensor(ops::matrix_shape(4, 2), rng)};
    if (bias) {
      inputs.push_back(oracle::random_tensor(ops::vector_shape(2), rng));
      inputs.push_back(oracle::random_tensor(ops::vector_shape(4), rng));
    }
    for (auto kind : {recalib::BlockKind::cse, recalib::BlockKind::pe}) {
      const double err = testutil::fd_check(
          [kind, bias](Tape<double>&, const std::vector<Var<double>>& v) {
            recalib::BlockVars<double> p{v[1], std::nullopt, v[2], std::nullopt};
            if (bias) {
              p.b1 = v[3];
              p.b2 = v[4];
            }
            return recalib::forward(kind, v[0], p);
          },
          inputs);
      EXPECT_LT(err, 1e-4) << recalib::to_string(kind) << " bias=" << bias;
    }
  }
}
