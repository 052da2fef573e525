#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rc3d/error.hpp"
#include "rc3d/json_util.hpp"
#include "rc3d/loss.hpp"
#include "rc3d/tensor.hpp"

// Synthetic volumetric scenes with a few large and a few tiny labelled
// structures, plus rotation and elastic augmentation.
namespace rc3d::data {

class GenerationError : public Error {
 public:
  using Error::Error;
};

enum class ShapeKind { ellipsoid, box, tube };

std::string to_string(ShapeKind kind);
ShapeKind shape_from_string(const std::string& name);

// Sizes are fractions of the grid: ellipsoid semi-axes and box half-extents
// per axis, tube radius relative to the smallest grid extent. Tubes are
// capsules of length 0.7 * smallest extent along a random direction.
struct StructureSpec {
  std::int32_t class_id = 1;
  ShapeKind shape = ShapeKind::ellipsoid;
  double size_min = 0.1;
  double size_max = 0.1;
  std::size_t count_min = 1;
  std::size_t count_max = 1;
};

struct Intensity {
  double mean = 0.0;
  double std = 0.0;
};

struct SceneSpec {
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t d = 32;
  std::size_t num_classes = 4;
  // Drawn in order; later structures overwrite earlier labels.
  std::vector<StructureSpec> structures;
  double noise_sigma = 0.25;
  std::vector<Intensity> intensity;  // per class, class 0 = background
  std::uint64_t seed = 0;

  // 32^3, background plus a large blob (~20% volume), a tube (~5%) and a tiny
  // ellipsoid (~1%).
  static SceneSpec default_scene();
  void validate() const;
};

Json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const Json& j);

struct VolumeSample {
  Tensor<float> image;  // [1, H, W, D]
  loss::LabelVolume labels;
};

// Sample i depends only on (spec, i).
VolumeSample generate_one(const SceneSpec& spec, std::size_t index);
std::vector<VolumeSample> generate(const SceneSpec& spec, std::size_t n);

// Exact rotation by angle_deg about one spatial axis (0 = H, 1 = W, 2 = D)
// through the grid centre. Image is resampled trilinearly, labels by nearest
// neighbour; samples outside the grid clamp to the border.
VolumeSample rotate(const VolumeSample& sample, int axis, double angle_deg);
// Random axis and angle in [-max_angle_deg, max_angle_deg]; max must be <= 30.
VolumeSample augment_rotate(const VolumeSample& sample, double max_angle_deg, std::mt19937_64& rng);

// Per-voxel displacement in voxels, one component per spatial axis.
struct DisplacementField {
  std::size_t h = 0, w = 0, d = 0;
  std::vector<double> dh, dw, dd;
};

// White noise U(-1, 1) per component, Gaussian-smoothed with `sigma` voxels,
// rescaled to unit RMS, times alpha.
DisplacementField elastic_field(std::size_t h, std::size_t w, std::size_t d, double alpha, double sigma,
                                std::mt19937_64& rng);
// out(p) = in(p + u(p)); trilinear for the image, nearest for labels.
VolumeSample warp(const VolumeSample& sample, const DisplacementField& field);
VolumeSample augment_elastic(const VolumeSample& sample, double alpha, double sigma, std::mt19937_64& rng);

// One file per sample (image record then label record, both tensor records)
// plus manifest.json holding the scene spec, seed and CRC-32 of every file.
struct DatasetManifest {
  SceneSpec scene;
  std::vector<std::string> files;
  std::vector<std::uint32_t> checksums;
};

DatasetManifest save_dataset(const std::filesystem::path& dir, const SceneSpec& scene,
                             const std::vector<VolumeSample>& samples);
// Verifies every checksum; throws InputError naming the first corrupt file.
std::vector<VolumeSample> load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest = nullptr);

}  // namespace rc3d::data
