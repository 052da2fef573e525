#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rc3d/error.hpp"
#include "rc3d/ops.hpp"
#include "test_util.hpp"

using namespace rc3d;
using oracle::Vec;

namespace {

bool integral(std::size_t n, std::size_t k, std::size_t s, std::size_t p) { return n + 2 * p >= k && (n + 2 * p - k) % s == 0; }

}  // namespace

TEST(Conv3d, MatchesNestedLoopsOnExhaustiveSmallSweep) {
  std::mt19937_64 rng(1);
  std::size_t cases = 0;
  double worst = 0;
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 4; ++w)
      for (std::size_t d = 1; d <= 4; ++d)
        for (std::size_t k : {1, 3})
          for (std::size_t s : {1, 2})
            for (std::size_t p : {0, 1}) {
              if (!integral(h, k, s, p) || !integral(w, k, s, p) || !integral(d, k, s, p)) continue;
              const std::size_t ci = 1 + (h + w) % 3, co = 1 + (w + d) % 3;
              const Shape xs{ci, h, w, d};
              const Vec x = oracle::random_vec(xs.numel(), rng);
              const Vec wt = oracle::random_vec(co * ci * k * k * k, rng);
              const Vec b = oracle::random_vec(co, rng);
              Tape<double> tape;
              const auto y = ops::conv3d<double>(tape.leaf({xs, x}), tape.leaf({ops::kernel_shape(co, ci, k), wt}),
                                                 tape.leaf({ops::vector_shape(co), b}), {s, p});
              Shape os;
              const Vec ref = oracle::conv3d(x, xs, wt, co, k, &b, s, p, &os);
              ASSERT_EQ(y.shape(), os);
              worst = std::max(worst, oracle::max_abs(y.value().to_vector(), ref));
              ++cases;
            }
  EXPECT_EQ(cases, 225u);
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv3d, LargerInputSpansSeveralColumnChunks) {
  std::mt19937_64 rng(2);
  const Shape xs{3, 20, 9, 11};
  const Vec x = oracle::random_vec(xs.numel(), rng);
  const Vec wt = oracle::random_vec(5 * 3 * 27, rng);
  Tape<double> tape;
  const auto y = ops::conv3d<double>(tape.leaf({xs, x}), tape.leaf({ops::kernel_shape(5, 3, 3), wt}), std::nullopt, {1, 1});
  EXPECT_LT(oracle::max_abs(y.value().to_vector(), oracle::conv3d(x, xs, wt, 5, 3, nullptr, 1, 1)), 1e-11);
}

TEST(Conv3d, FloatAgreesWithDouble) {
  std::mt19937_64 rng(3);
  const Shape xs{2, 4, 4, 4};
  const Vec x = oracle::random_vec(xs.numel(), rng);
  const Vec wt = oracle::random_vec(3 * 2 * 27, rng);
  std::vector<float> xf(x.begin(), x.end()), wf(wt.begin(), wt.end());
  Tape<float> tape;
  const auto y = ops::conv3d<float>(tape.leaf({xs, xf}), tape.leaf({ops::kernel_shape(3, 2, 3), wf}), std::nullopt, {1, 1});
  const Vec ref = oracle::conv3d(x, xs, wt, 3, 3, nullptr, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-5);
}

TEST(Conv3d, RejectsBadGeometry) {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::zeros({2, 4, 4, 4}));
  EXPECT_THROW(ops::conv3d<double>(x, tape.leaf(Tensor<double>::zeros(ops::kernel_shape(1, 3, 3))), std::nullopt),
               ConfigError);
  EXPECT_THROW(ops::conv3d<double>(x, tape.leaf(Tensor<double>::zeros(ops::kernel_shape(1, 2, 3))), std::nullopt,
                                   {2, 0}),
               ConfigError);
  EXPECT_THROW(ops::conv3d<double>(x, tape.leaf(Tensor<double>::zeros({1, 2, 2, 4})), std::nullopt), ConfigError);
}

TEST(Conv3d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (auto [s, p] : {std::pair<std::size_t, std::size_t>{1, 1}, {1, 0}, {2, 1}}) {
    const double err = testutil::fd_check(
        [s = s, p = p](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::conv3d<double>(v[0], v[1], v[2], {s, p});
        },
        {oracle::random_tensor({2, 3, 5, 3}, rng), oracle::random_tensor(ops::kernel_shape(2, 2, 3), rng),
         oracle::random_tensor(ops::vector_shape(2), rng)});
    EXPECT_LT(err, 1e-4) << "stride " << s << " pad " << p;
  }
  const double pw = testutil::fd_check(
      [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::conv3d<double>(v[0], v[1], std::nullopt); },
      {oracle::random_tensor({3, 2, 3, 2}, rng), oracle::random_tensor(ops::kernel_shape(2, 3, 1), rng)});
  EXPECT_LT(pw, 1e-4);
}

TEST(Pooling, AvgPoolAxesMatchLoops) {
  std::mt19937_64 rng(5);
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 4; ++w)
      for (std::size_t d = 1; d <= 4; ++d) {
        const Shape s{2, h, w, d};
        const auto u = oracle::random_tensor(s, rng);
        const Vec uv = u.to_vector();
        Tape<double> tape;
        const auto x = tape.leaf(u);
        EXPECT_LT(oracle::max_abs(ops::avg_pool_axes(x, ops::KeepAxis::h).value().to_vector(), oracle::project_h(uv, s)), 1e-14);
        EXPECT_LT(oracle::max_abs(ops::avg_pool_axes(x, ops::KeepAxis::w).value().to_vector(), oracle::project_w(uv, s)), 1e-14);
        EXPECT_LT(oracle::max_abs(ops::avg_pool_axes(x, ops::KeepAxis::d).value().to_vector(), oracle::project_d(uv, s)), 1e-14);
        EXPECT_LT(oracle::max_abs(ops::avg_pool_axes(x, ops::KeepAxis::none).value().to_vector(), oracle::global_mean(uv, s)), 1e-14);
        EXPECT_EQ(ops::avg_pool_axes(x, ops::KeepAxis::w).shape(), (Shape{2, 1, w, 1}));
      }
}

TEST(Pooling, MaxPoolAndUpsampleMatchLoops) {
  std::mt19937_64 rng(6);
  for (std::size_t h : {2, 4})
    for (std::size_t w : {2, 4})
      for (std::size_t d : {2, 4}) {
        const Shape s{3, h, w, d};
        const auto u = oracle::random_tensor(s, rng);
        Tape<double> tape;
        const auto x = tape.leaf(u);
        EXPECT_EQ(ops::max_pool2(x).value().to_vector(), oracle::max_pool2(u.to_vector(), s));
        EXPECT_EQ(ops::upsample_nearest2(x).value().to_vector(), oracle::upsample2(u.to_vector(), s));
      }
  Tape<double> tape;
  EXPECT_THROW(ops::max_pool2(tape.leaf(Tensor<double>::zeros({1, 3, 2, 2}))), ConfigError);
}

TEST(Pooling, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  EXPECT_LT(testutil::fd_check([](Tape<double>&, const std::vector<Var<double>>& v) { return ops::max_pool2(v[0]); },
                               {oracle::random_tensor({2, 4, 2, 4}, rng)}),
            1e-4);
  EXPECT_LT(testutil::fd_check(
                [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::upsample_nearest2(v[0]); },
                {oracle::random_tensor({2, 2, 1, 3}, rng)}),
            1e-4);
  for (auto keep : {ops::KeepAxis::none, ops::KeepAxis::h, ops::KeepAxis::w, ops::KeepAxis::d}) {
    EXPECT_LT(testutil::fd_check(
                  [keep](Tape<double>&, const std::vector<Var<double>>& v) { return ops::avg_pool_axes(v[0], keep); },
                  {oracle::random_tensor({2, 3, 4, 2}, rng)}),
              1e-4);
  }
}

TEST(Broadcast, MulAndAddMatchTripleLoopOverEveryPattern) {
  std::mt19937_64 rng(8);
  const Shape as{2, 3, 4, 2};
  for (int mask = 0; mask < 16; ++mask) {
    const Shape bs{mask & 1 ? as.c : 1, mask & 2 ? as.h : 1, mask & 4 ? as.w : 1, mask & 8 ? as.d : 1};
    const auto a = oracle::random_tensor(as, rng);
    const auto b = oracle::random_tensor(bs, rng);
    Tape<double> tape;
    const auto av = tape.leaf(a), bv = tape.leaf(b);
    EXPECT_EQ(ops::mul_broadcast(av, bv).value().to_vector(),
              oracle::broadcast(a.to_vector(), as, b.to_vector(), bs, [](double x, double y) { return x * y; }));
    EXPECT_EQ(ops::add_broadcast(av, bv).value().to_vector(),
              oracle::broadcast(a.to_vector(), as, b.to_vector(), bs, [](double x, double y) { return x + y; }));
    EXPECT_LT(testutil::fd_check(
                  [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::mul_broadcast(v[0], v[1]); },
                  {a, b}),
              1e-4);
  }
}

TEST(Broadcast, ThreeWayAddOfAxisProfiles) {
  std::mt19937_64 rng(9);
  const auto zh = oracle::random_tensor({2, 3, 1, 1}, rng);
  const auto zw = oracle::random_tensor({2, 1, 4, 1}, rng);
  const auto zd = oracle::random_tensor({2, 1, 1, 2}, rng);
  Tape<double> tape;
  const auto z = ops::add_broadcast(tape.leaf(zh), tape.leaf(zw), tape.leaf(zd)).value();
  ASSERT_EQ(z.shape(), (Shape{2, 3, 4, 2}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 2; ++k)
          EXPECT_DOUBLE_EQ(z.at(c, i, j, k), zh.at(c, i, 0, 0) + zw.at(c, 0, j, 0) + zd.at(c, 0, 0, k));
  EXPECT_LT(testutil::fd_check(
                [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::add_broadcast(v[0], v[1], v[2]); },
                {zh, zw, zd}),
            1e-4);
  EXPECT_THROW(ops::add_broadcast(tape.leaf(Tensor<double>::zeros({2, 3, 1, 1})),
                                  tape.leaf(Tensor<double>::zeros({2, 2, 1, 1}))),
               ConfigError);
}

TEST(InstanceNorm, MatchesTwoPassStatistics) {
  std::mt19937_64 rng(10);
  const Shape s{3, 4, 3, 2};
  const auto x = oracle::random_tensor(s, rng, -4, 4);
  const auto g = oracle::random_tensor(ops::vector_shape(3), rng, 0.5, 2);
  const auto b = oracle::random_tensor(ops::vector_shape(3), rng);
  Tape<double> tape;
  const auto y = ops::instance_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), 1e-5).value();
  EXPECT_LT(oracle::max_abs(y.to_vector(), oracle::instance_norm(x.to_vector(), s, g.to_vector(), b.to_vector(), 1e-5)),
            1e-12);
}

TEST(InstanceNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const double err = testutil::fd_check(
      [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::instance_norm(v[0], v[1], v[2]); },
      {oracle::random_tensor({3, 2, 3, 4}, rng), oracle::random_tensor(ops::vector_shape(3), rng, 0.5, 1.5),
       oracle::random_tensor(ops::vector_shape(3), rng)});
  EXPECT_LT(err, 1e-4);
}

TEST(Pointwise, SigmoidIsStableAndGradientsMatch) {
  Tape<double> tape;
  const auto y = ops::sigmoid(tape.leaf(Tensor<double>({1, 1, 1, 3}, {-800.0, 0.0, 800.0}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.5);
  EXPECT_EQ(y[2], 1.0);
  std::mt19937_64 rng(12);
  EXPECT_LT(testutil::fd_check([](Tape<double>&, const std::vector<Var<double>>& v) { return ops::sigmoid(v[0]); },
                               {oracle::random_tensor({2, 2, 2, 2}, rng, -4, 4)}),
            1e-4);
  EXPECT_LT(testutil::fd_check([](Tape<double>&, const std::vector<Var<double>>& v) { return ops::relu(v[0]); },
                               {oracle::random_tensor({2, 2, 2, 2}, rng)}),
            1e-4);
}

TEST(Dense, FcAndConcat) {
  std::mt19937_64 rng(13);
  const auto x = oracle::random_tensor(ops::vector_shape(4), rng);
  const auto w = oracle::random_tensor(ops::matrix_shape(3, 4), rng);
  const auto b = oracle::random_tensor(ops::vector_shape(3), rng);
  Tape<double> tape;
  const auto y = ops::fc<double>(tape.leaf(x), tape.leaf(w), tape.leaf(b)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < 4; ++c) acc += w[r * 4 + c] * x[c];
    EXPECT_NEAR(y[r], acc, 1e-14);
  }
  EXPECT_LT(testutil::fd_check(
                [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::fc<double>(v[0], v[1], v[2]); },
                {x, w, b}),
            1e-4);
  const auto a = oracle::random_tensor({2, 2, 1, 2}, rng);
  const auto c = oracle::random_tensor({1, 2, 1, 2}, rng);
  const auto cat = ops::concat_channels(tape.leaf(a), tape.leaf(c)).value();
  ASSERT_EQ(cat.shape(), (Shape{3, 2, 1, 2}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(cat[i], a[i]);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(cat[8 + i], c[i]);
  EXPECT_LT(testutil::fd_check(
                [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::concat_channels(v[0], v[1]); },
                {a, c}),
            1e-4);
}
