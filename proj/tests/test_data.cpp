#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "rc3d/data.hpp"

using namespace rc3d;
using data::SceneSpec;
using data::VolumeSample;

namespace {

SceneSpec single_structure(double size, std::size_t grid = 32) {
  SceneSpec s;
  s.h = s.w = s.d = grid;
  s.num_classes = 2;
  s.structures = {{1, data::ShapeKind::ellipsoid, size, size, 1, 1}};
  s.intensity = {{0.0, 0.0}, {1.5, 0.0}};
  s.noise_sigma = 0.0;
  return s;
}

std::vector<std::size_t> counts(const VolumeSample& s) { return s.labels.class_counts(); }

// Image and labels both hold the h index of each voxel.
VolumeSample coordinate_sample(std::size_t n) {
  std::vector<float> img(n * n * n);
  std::vector<std::int32_t> lab(n * n * n);
  for (std::size_t a = 0, v = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c, ++v) {
        img[v] = static_cast<float>(a);
        lab[v] = static_cast<std::int32_t>(a);
      }
  return {Tensor<float>({1, n, n, n}, img), loss::LabelVolume(n, n, n, n, lab)};
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rc3d_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Generate, DeterministicAndIndexAddressable) {
  const auto spec = SceneSpec::default_scene();
  const auto a = data::generate(spec, 3), b = data::generate(spec, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(a[i].image.bitwise_equal(b[i].image));
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  EXPECT_TRUE(data::generate_one(spec, 2).image.bitwise_equal(a[2].image));
  EXPECT_FALSE(a[0].image.bitwise_equal(a[1].image));
  auto other = spec;
  other.seed = 1;
  EXPECT_FALSE(data::generate_one(other, 0).image.bitwise_equal(a[0].image));
}

TEST(Generate, NoiselessImageIsClassMean) {
  const auto s = data::generate_one(single_structure(0.25), 0);
  std::size_t inside = 0;
  const auto img = s.image.data();
  for (std::size_t v = 0; v < img.size(); ++v) {
    const bool in = s.labels.labels()[v] == 1;
    inside += in;
    EXPECT_EQ(img[v], in ? 1.5f : 0.0f);
  }
  EXPECT_GT(inside, 0u);
}

TEST(Generate, SmallStructureFrequencyMatchesVolume) {
  // (4/3) pi 0.1684^3 = 0.02 of the grid.
  const auto samples = data::generate(single_structure(0.1684), 20);
  double freq = 0;
  for (const auto& s : samples) freq += static_cast<double>(counts(s)[1]) / static_cast<double>(s.labels.size());
  freq /= 20;
  EXPECT_GE(freq, 0.01);
  EXPECT_LE(freq, 0.03);
}

TEST(Generate, DefaultSceneClassProfile) {
  const auto samples = data::generate(SceneSpec::default_scene(), 10);
  std::vector<double> f(4, 0);
  for (const auto& s : samples) {
    const auto c = counts(s);
    for (std::size_t k = 0; k < 4; ++k) f[k] += static_cast<double>(c[k]) / (32.0 * 32 * 32 * 10);
  }
  EXPECT_GT(f[1], 0.12);
  EXPECT_LT(f[1], 0.28);
  EXPECT_GT(f[2], 0.02);
  EXPECT_LT(f[2], 0.09);
  EXPECT_GT(f[3], 0.004);
  EXPECT_LT(f[3], 0.02);
}

TEST(Generate, UnplaceableStructureThrows) {
  auto s = single_structure(0.45, 8);
  s.structures[0].shape = data::ShapeKind::tube;
  EXPECT_THROW(data::generate_one(s, 0), data::GenerationError);
}

TEST(SceneSpec, ValidationAndJson) {
  auto s = SceneSpec::default_scene();
  s.structures[0].class_id = 4;
  EXPECT_THROW(s.validate(), ConfigError);
  const auto d = SceneSpec::default_scene();
  const auto back = data::scene_spec_from_json(data::to_json(d));
  EXPECT_EQ(data::to_json(back), data::to_json(d));
  EXPECT_THROW(data::scene_spec_from_json(Json{{"noise", 1}}), ConfigError);
  EXPECT_THROW(data::shape_from_string("cone"), ConfigError);
}

TEST(Rotate, ZeroIsIdentity) {
  const auto s = data::generate_one(SceneSpec::default_scene(), 0);
  for (int axis = 0; axis < 3; ++axis) {
    const auto r = data::rotate(s, axis, 0.0);
    EXPECT_TRUE(r.image.bitwise_equal(s.image));
    EXPECT_EQ(r.labels, s.labels);
  }
  std::mt19937_64 rng(1);
  const auto r = data::augment_rotate(s, 0.0, rng);
  EXPECT_TRUE(r.image.bitwise_equal(s.image));
}

TEST(Rotate, QuarterTurnIsVoxelPermutation) {
  const auto s = data::generate_one(SceneSpec::default_scene(), 1);
  for (int axis = 0; axis < 3; ++axis) {
    const auto r = data::rotate(s, axis, 90.0);
    auto a = s.image.to_vector(), b = r.image.to_vector();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(counts(r), counts(s));
    EXPECT_FALSE(r.labels == s.labels);
    auto back = r;
    for (int k = 0; k < 3; ++k) back = data::rotate(back, axis, 90.0);
    EXPECT_TRUE(back.image.bitwise_equal(s.image));
    EXPECT_EQ(back.labels, s.labels);
  }
}

TEST(Rotate, SmallAnglesKeepClassCounts) {
  const auto samples = data::generate(SceneSpec::default_scene(), 4);
  std::mt19937_64 rng(2);
  for (const auto& s : samples) {
    const auto before = counts(s);
    for (int i = 0; i < 5; ++i) {
      const auto after = counts(data::augment_rotate(s, 15.0, rng));
      for (std::size_t c = 0; c < 4; ++c) {
        const double drift = std::abs(static_cast<double>(after[c]) - static_cast<double>(before[c])) /
                             static_cast<double>(before[c]);
        EXPECT_LT(drift, 0.10) << "class " << c;
      }
    }
  }
  EXPECT_THROW(data::augment_rotate(samples[0], 31.0, rng), ConfigError);
}

TEST(Elastic, ZeroAlphaIsIdentity) {
  const auto s = data::generate_one(SceneSpec::default_scene(), 0);
  std::mt19937_64 rng(3);
  const auto r = data::augment_elastic(s, 0.0, 4.0, rng);
  EXPECT_TRUE(r.image.bitwise_equal(s.image));
  EXPECT_EQ(r.labels, s.labels);
}

TEST(Elastic, SameRngSameWarp) {
  const auto s = data::generate_one(SceneSpec::default_scene(), 0);
  std::mt19937_64 r1(4), r2(4);
  const auto a = data::augment_elastic(s, 4.0, 4.0, r1), b = data::augment_elastic(s, 4.0, 4.0, r2);
  EXPECT_TRUE(a.image.bitwise_equal(b.image));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.image.bitwise_equal(s.image));
}

TEST(Elastic, DisplacementStatistics) {
  // Unit-RMS smoothed noise is close to Gaussian: E|u_i| = alpha sqrt(2/pi),
  // E||u|| = alpha sqrt(8/pi).
  const double alpha = 4.0;
  std::mt19937_64 rng(5);
  double comp = 0, mag = 0;
  std::size_t n = 0;
  for (int trial = 0; trial < 8; ++trial) {
    const auto f = data::elastic_field(32, 32, 32, alpha, 4.0, rng);
    for (std::size_t v = 0; v < f.dh.size(); ++v) {
      comp += (std::abs(f.dh[v]) + std::abs(f.dw[v]) + std::abs(f.dd[v])) / 3;
      mag += std::sqrt(f.dh[v] * f.dh[v] + f.dw[v] * f.dw[v] + f.dd[v] * f.dd[v]);
      ++n;
    }
  }
  comp /= static_cast<double>(n);
  mag /= static_cast<double>(n);
  EXPECT_NEAR(comp, alpha * std::sqrt(2 / std::numbers::pi), 0.2 * alpha * std::sqrt(2 / std::numbers::pi));
  EXPECT_NEAR(mag, alpha * std::sqrt(8 / std::numbers::pi), 0.2 * alpha * std::sqrt(8 / std::numbers::pi));
}

TEST(Augment, LabelsStayInRange) {
  const auto s = data::generate_one(SceneSpec::default_scene(), 2);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 5; ++i) {
    const auto r = data::augment_elastic(data::augment_rotate(s, 30.0, rng), 6.0, 3.0, rng);
    for (auto l : r.labels.labels()) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, 4);
    }
  }
}

TEST(Augment, ImageAndLabelsStayAligned) {
  // A coordinate ramp warped trilinearly sits within half a voxel of the same
  // ramp warped by nearest neighbour.
  const auto s = coordinate_sample(16);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 4; ++i) {
    const auto rot = data::augment_rotate(s, 25.0, rng);
    const auto el = data::augment_elastic(s, 3.0, 3.0, rng);
    for (const auto* r : {&rot, &el}) {
      const auto img = r->image.data();
      for (std::size_t v = 0; v < img.size(); ++v) {
        ASSERT_LE(std::abs(img[v] - static_cast<float>(r->labels.labels()[v])), 0.5f + 1e-4f) << v;
      }
    }
  }
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = scratch("dataset");
  const auto spec = SceneSpec::default_scene();
  const auto samples = data::generate(spec, 3);
  const auto m = data::save_dataset(dir, spec, samples);
  ASSERT_EQ(m.files.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  data::DatasetManifest loaded;
  const auto back = data::load_dataset(dir, &loaded);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(loaded.checksums, m.checksums);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(back[i].image.bitwise_equal(samples[i].image));
    EXPECT_EQ(back[i].labels, samples[i].labels);
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, CorruptFileIsNamed) {
  const auto dir = scratch("dataset_corrupt");
  const auto spec = SceneSpec::default_scene();
  const auto m = data::save_dataset(dir, spec, data::generate(spec, 2));
  {
    std::fstream f(dir / m.files[1], std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    f.put('\x7f');
  }
  try {
    data::load_dataset(dir);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(m.files[1]), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
