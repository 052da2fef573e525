#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rc3d/error.hpp"
#include "rc3d/loss.hpp"
#include "test_util.hpp"

using namespace rc3d;
using loss::LabelVolume;

namespace {

LabelVolume random_labels(std::size_t h, std::size_t w, std::size_t d, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> u(0, static_cast<std::int32_t>(c) - 1);
  std::vector<std::int32_t> v(h * w * d);
  for (auto& x : v) x = u(rng);
  return {h, w, d, c, v};
}

double loss_value(const Tensor<double>& logits, const LabelVolume& t, const loss::ClassWeights& w,
                  loss::LossOptions o = {}) {
  Tape<double> tape;
  return loss::combined_loss(tape.constant(logits), t, w, o).value().item();
}

}  // namespace

TEST(MedianFrequency, WorkedExample) {
  // Counts 6, 3, 2, 1 of 12: freqs .5 .25 .1667 .0833, median .2083.
  std::vector<std::int32_t> v{0, 0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 3};
  const auto w = loss::median_frequency_weights(LabelVolume(1, 1, 12, 4, v));
  ASSERT_EQ(w.w.size(), 4u);
  const double med = (0.25 + 2.0 / 12) / 2;
  EXPECT_NEAR(w.w[0], med / 0.5, 1e-12);
  EXPECT_NEAR(w.w[1], med / 0.25, 1e-12);
  EXPECT_NEAR(w.w[2], med / (2.0 / 12), 1e-12);
  EXPECT_NEAR(w.w[3], med / (1.0 / 12), 1e-12);
}

TEST(MedianFrequency, AbsentClassGetsZeroAndAggregatesOverVolumes) {
  const std::vector<LabelVolume> vols{LabelVolume(1, 1, 4, 3, {0, 0, 0, 1}), LabelVolume(1, 1, 4, 3, {0, 1, 1, 1})};
  const auto w = loss::median_frequency_weights(std::span<const LabelVolume>(vols));
  EXPECT_DOUBLE_EQ(w.w[0], 1.0);
  EXPECT_DOUBLE_EQ(w.w[1], 1.0);
  EXPECT_EQ(w.w[2], 0.0);
}

TEST(CombinedLoss, MatchesOracleOnSmallSweep) {
  std::mt19937_64 rng(3);
  double worst = 0;
  int cases = 0;
  for (std::size_t c = 2; c <= 4; ++c)
    for (std::size_t h = 1; h <= 4; ++h)
      for (std::size_t w = 1; w <= 4; ++w)
        for (std::size_t d = 1; d <= 4; ++d) {
          const Shape s{c, h, w, d};
          const auto z = oracle::random_vec(s.numel(), rng, -3, 3);
          const auto t = random_labels(h, w, d, c, rng);
          const auto cw = oracle::random_vec(c, rng, 0.1, 2.0);
          const double lce = 0.3 + 0.2 * static_cast<double>(h), ldice = 1.7 - 0.1 * static_cast<double>(w);
          const double got = loss_value({s, z}, t, {cw}, {lce, ldice});
          const double ref = oracle::combined_loss(z, s, {t.labels().begin(), t.labels().end()}, cw, lce, ldice);
          worst = std::max(worst, std::abs(got - ref));
          ++cases;
        }
  EXPECT_EQ(cases, 192);
  EXPECT_LT(worst, 1e-12);
}

TEST(CombinedLoss, NonNegativeAndNearZeroWhenConfident) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_labels(3, 2, 4, 3, rng);
    EXPECT_GE(loss_value(oracle::random_tensor({3, 3, 2, 4}, rng, -5, 5), t, {{1, 2, 3}}), 0.0);
  }
  const auto t = random_labels(2, 2, 2, 3, rng);
  std::vector<double> z(3 * 8, -40.0);
  for (std::size_t v = 0; v < 8; ++v) z[static_cast<std::size_t>(t.labels()[v]) * 8 + v] = 40.0;
  EXPECT_LT(loss_value({{3, 2, 2, 2}, z}, t, {{1, 1, 1}}), 1e-6);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    const auto t = random_labels(3, 2, 3, 4, rng);
    const loss::ClassWeights w{oracle::random_vec(4, rng, 0.2, 3.0)};
    const double err = testutil::fd_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) { return loss::combined_loss(v[0], t, w); },
        {oracle::random_tensor({4, 3, 2, 3}, rng, -2, 2)});
    EXPECT_LT(err, 1e-4);
  }
}

TEST(CombinedLoss, InvariantToWeightScaling) {
  std::mt19937_64 rng(6);
  const auto t = random_labels(2, 3, 4, 3, rng);
  const auto z = oracle::random_tensor({3, 2, 3, 4}, rng, -2, 2);
  EXPECT_NEAR(loss_value(z, t, {{0.5, 1.0, 2.0}}), loss_value(z, t, {{5.0, 10.0, 20.0}}), 1e-12);
}

TEST(CombinedLoss, InvariantToVoxelPermutation) {
  std::mt19937_64 rng(7);
  const auto t = random_labels(1, 1, 10, 3, rng);
  const auto z = oracle::random_vec(30, rng, -2, 2);
  std::vector<std::size_t> perm(10);
  for (std::size_t i = 0; i < 10; ++i) perm[i] = (i * 3 + 1) % 10;
  std::vector<std::int32_t> tp(10);
  std::vector<double> zp(30);
  for (std::size_t v = 0; v < 10; ++v) {
    tp[v] = t.labels()[perm[v]];
    for (std::size_t c = 0; c < 3; ++c) zp[c * 10 + v] = z[c * 10 + perm[v]];
  }
  const loss::ClassWeights w{{1, 2, 3}};
  EXPECT_NEAR(loss_value({{3, 1, 1, 10}, z}, t, w), loss_value({{3, 1, 1, 10}, zp}, LabelVolume(1, 1, 10, 3, tp), w),
              1e-12);
}

TEST(CombinedLoss, RejectsMismatchedInputs) {
  const auto t = LabelVolume::filled(2, 2, 2, 3, 0);
  EXPECT_THROW(loss_value(Tensor<double>::zeros({3, 2, 2, 1}), t, {{1, 1, 1}}), InputError);
  EXPECT_THROW(loss_value(Tensor<double>::zeros({3, 2, 2, 2}), t, {{1, 1}}), InputError);
  EXPECT_THROW(LabelVolume(1, 1, 2, 3, {0, 3}), InputError);
}

TEST(Dice, WorkedExamples) {
  const LabelVolume t(1, 1, 4, 2, {1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(*loss::dice_score(t, t, 2).per_class[1], 1.0);
  const auto disjoint = loss::dice_score(LabelVolume(1, 1, 4, 2, {0, 0, 1, 1}), t, 2);
  EXPECT_DOUBLE_EQ(*disjoint.per_class[1], 0.0);
  EXPECT_DOUBLE_EQ(*disjoint.per_class[0], 0.0);
  const auto half = loss::dice_score(LabelVolume(1, 1, 4, 2, {1, 0, 1, 0}), t, 2);
  EXPECT_DOUBLE_EQ(*half.per_class[1], 0.5);
  EXPECT_DOUBLE_EQ(half.mean, 0.5);
}

TEST(Dice, SymmetricAndSkipsAbsentClasses) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_labels(3, 3, 3, 4, rng), b = random_labels(3, 3, 3, 4, rng);
    const auto ab = loss::dice_score(a, b, 4), ba = loss::dice_score(b, a, 4);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(ab.per_class[c], ba.per_class[c]);
  }
  const LabelVolume t(1, 1, 3, 3, {0, 0, 1});
  const auto r = loss::dice_score(t, t, 3);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(PredictLabels, ArgmaxOverChannels) {
  const Tensor<double> z({3, 1, 1, 2}, {0.1, 5.0, 2.0, -1.0, 1.0, 7.0});
  const auto p = loss::predict_labels(z);
  EXPECT_EQ(p.at(0, 0, 0), 1);
  EXPECT_EQ(p.at(0, 0, 1), 2);
}

TEST(CombinedLoss, UniformLogitsGiveLnTwo) {
  const LabelVolume t(1, 2, 2, 2, {0, 1, 1, 0});
  const double l = loss_value(Tensor<double>::zeros({2, 1, 2, 2}), t, {{1, 1}}, {1.0, 0.0});
  EXPECT_NEAR(l, std::log(2.0), 1e-6);
}
