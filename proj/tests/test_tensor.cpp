#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "rc3d/error.hpp"
#include "rc3d/ops.hpp"
#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

using namespace rc3d;

TEST(Tensor, ConstructsAndIndexesRowMajor) {
  Tensor<double> t({2, 1, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  EXPECT_EQ(t.numel(), 12u);
  EXPECT_EQ(t.at(1, 0, 1, 2), 11.0);
  EXPECT_EQ(t.at(0, 0, 1, 0), 3.0);
  EXPECT_EQ(t.shape().str(), "[2,1,2,3]");
}

TEST(Tensor, RejectsBadPayloads) {
  EXPECT_THROW(Tensor<float>({2, 2, 1, 1}, {1, 2, 3}), ConfigError);
  EXPECT_THROW(Tensor<float>({0, 1, 1, 1}, {}), ConfigError);
  EXPECT_THROW(Tensor<double>({1, 1, 1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor<float>({1, 1, 1, 1}, {std::numeric_limits<float>::infinity()}), NumericError);
}

TEST(Tensor, CopiesSharePayload) {
  const auto a = Tensor<float>::filled({1, 2, 2, 2}, 3.0f);
  const Tensor<float> b = a;
  EXPECT_EQ(a.raw(), b.raw());
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_EQ(a.reshaped({8, 1, 1, 1}).raw(), a.raw());
  EXPECT_THROW(a.reshaped({3, 1, 1, 1}), ConfigError);
}

TEST(Tensor, CastRoundTrip) {
  Tensor<double> d({1, 1, 1, 3}, {0.5, -1.25, 3.0});
  const auto f = d.cast<float>();
  EXPECT_EQ(f[1], -1.25f);
  EXPECT_TRUE(f.cast<double>().bitwise_equal(d));
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
  EXPECT_THROW((void)Tensor<double>::zeros({2, 1, 1, 1}).item(), UsageError);
}

TEST(TensorFormat, RoundTripsBothDtypes) {
  Tensor<double> d({2, 3, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, -12.5});
  const auto bytes = encode_tensor(d);
  ASSERT_EQ(bytes.size(), 4u + 4u + 1u + 32u + 12u * 8u);
  EXPECT_EQ(std::string(bytes.data(), 4), "RC3D");
  EXPECT_TRUE(decode_tensor<double>(bytes).bitwise_equal(d));
  // Stored as f64, read as f32.
  EXPECT_EQ(decode_tensor<float>(bytes)[11], -12.5f);
  const auto f = d.cast<float>();
  EXPECT_TRUE(decode_tensor<float>(encode_tensor(f)).bitwise_equal(f));
}

TEST(TensorFormat, LittleEndianHeader) {
  const auto bytes = encode_tensor(Tensor<float>::zeros({3, 1, 1, 1}));
  EXPECT_EQ(bytes[4], 1);  // version, low byte first
  EXPECT_EQ(bytes[8], 1);  // f32 tag
  EXPECT_EQ(bytes[9], 3);  // c
}

TEST(TensorFormat, RejectsCorruptRecords) {
  auto bytes = encode_tensor(Tensor<float>::zeros({2, 2, 1, 1}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor<float>(bad_magic), InputError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_tensor<float>(truncated), InputError);
  auto bad_dtype = bytes;
  bad_dtype[8] = 9;
  EXPECT_THROW(decode_tensor<float>(bad_dtype), InputError);
}

TEST(Tape, BackwardOfSumIsOnes) {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::filled({2, 2, 1, 1}, 3.0));
  tape.backward(ops::sum(x));
  const auto gx = tape.grad(x);
  for (double g : gx.data()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, GradientsAccumulateOverFanOut) {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::filled({1, 1, 1, 3}, 2.0));
  const auto y = ops::add_broadcast(x, ops::scale(x, 3.0));
  tape.backward(ops::sum(y));
  const auto gx = tape.grad(x);
  for (double g : gx.data()) EXPECT_EQ(g, 4.0);
}

TEST(Tape, UnreachedAndConstantInputsGetZeroGrad) {
  Tape<double> tape;
  const auto a = tape.leaf(Tensor<double>::filled({1, 1, 1, 2}, 1.0));
  const auto c = tape.constant(Tensor<double>::filled({1, 1, 1, 2}, 5.0));
  const auto unused = tape.leaf(Tensor<double>::filled({1, 1, 1, 2}, 1.0));
  tape.backward(ops::sum(ops::mul_broadcast(a, c)));
  EXPECT_EQ(tape.grad(a)[0], 5.0);
  EXPECT_EQ(tape.grad(c)[1], 0.0);
  EXPECT_EQ(tape.grad(unused)[0], 0.0);
  EXPECT_FALSE(tape.requires_grad(c));
}

TEST(Tape, MisuseIsReported) {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::filled({2, 1, 1, 1}, 1.0));
  EXPECT_THROW(tape.backward(x), UsageError);  // not a scalar
  Tape<double> other;
  const auto y = other.leaf(Tensor<double>::scalar(1.0));
  EXPECT_THROW(tape.backward(y), UsageError);
  EXPECT_THROW(ops::add_broadcast(x, y), UsageError);
  const auto s = ops::sum(x);
  tape.backward(s);
  EXPECT_TRUE(tape.backward_done());
  EXPECT_THROW(tape.backward(s), UsageError);
  EXPECT_THROW(ops::sum(x), UsageError);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_NO_THROW(tape.leaf(Tensor<double>::scalar(1.0)));
}
