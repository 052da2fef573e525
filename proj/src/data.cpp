#include "rc3d/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rc3d/runtime.hpp"

namespace rc3d::data {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::box: return "box";
    case ShapeKind::tube: return "tube";
  }
  return "ellipsoid";
}

ShapeKind shape_from_string(const std::string& name) {
  if (name == "ellipsoid") return ShapeKind::ellipsoid;
  if (name == "box") return ShapeKind::box;
  if (name == "tube") return ShapeKind::tube;
  throw ConfigError("unknown structure shape '" + name + "' (valid: ellipsoid, box, tube)");
}

SceneSpec SceneSpec::default_scene() {
  SceneSpec s;
  s.structures = {
      {1, ShapeKind::ellipsoid, 0.33, 0.39, 1, 1},
      {2, ShapeKind::tube, 0.12, 0.15, 1, 1},
      {3, ShapeKind::ellipsoid, 0.12, 0.145, 1, 1},
  };
  s.intensity = {{0.0, 0.05}, {1.0, 0.1}, {1.6, 0.1}, {2.3, 0.1}};
  return s;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid scene spec: " + what); };
  if (h == 0 || w == 0 || d == 0) fail("grid dims must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (intensity.size() != num_classes) fail("intensity map needs one entry per class");
  if (!(noise_sigma >= 0)) fail("noise_sigma must be >= 0");
  for (const auto& in : intensity) {
    if (!std::isfinite(in.mean) || !(in.std >= 0)) fail("intensity entries need finite mean and std >= 0");
  }
  for (const auto& st : structures) {
    if (st.class_id <= 0 || static_cast<std::size_t>(st.class_id) >= num_classes) {
      fail("structure class id " + std::to_string(st.class_id) + " must be in [1, num_classes)");
    }
    if (!(st.size_min > 0) || st.size_max < st.size_min || st.size_max >= 0.5) {
      fail("structure sizes must satisfy 0 < size_min <= size_max < 0.5");
    }
    if (st.count_max < st.count_min) fail("structure count_max < count_min");
  }
}

Json to_json(const SceneSpec& s) {
  Json structures = Json::array();
  for (const auto& st : s.structures) {
    structures.push_back(Json{{"class_id", st.class_id},
                              {"shape", to_string(st.shape)},
                              {"size_min", st.size_min},
                              {"size_max", st.size_max},
                              {"count_min", st.count_min},
                              {"count_max", st.count_max}});
  }
  Json intensity = Json::array();
  for (const auto& in : s.intensity) intensity.push_back(Json{{"mean", in.mean}, {"std", in.std}});
  return Json{{"grid", {s.h, s.w, s.d}},   {"num_classes", s.num_classes},
              {"structures", structures}, {"noise_sigma", s.noise_sigma},
              {"intensity", intensity},   {"seed", s.seed}};
}

SceneSpec scene_spec_from_json(const Json& j) {
  require_known_keys(j, {"grid", "num_classes", "structures", "noise_sigma", "intensity", "seed"}, "scene");
  SceneSpec s = SceneSpec::default_scene();
  if (j.contains("grid")) {
    std::array<std::size_t, 3> g{};
    read_optional(j, "grid", g, "scene");
    s.h = g[0];
    s.w = g[1];
    s.d = g[2];
  }
  read_optional(j, "num_classes", s.num_classes, "scene");
  if (j.contains("structures")) {
    s.structures.clear();
    for (const auto& e : j["structures"]) {
      require_known_keys(e, {"class_id", "shape", "size_min", "size_max", "count_min", "count_max"},
                         "scene.structures[]");
      StructureSpec st;
      std::string shape = "ellipsoid";
      read_optional(e, "class_id", st.class_id, "scene.structures[]");
      read_optional(e, "shape", shape, "scene.structures[]");
      st.shape = shape_from_string(shape);
      read_optional(e, "size_min", st.size_min, "scene.structures[]");
      st.size_max = st.size_min;
      read_optional(e, "size_max", st.size_max, "scene.structures[]");
      read_optional(e, "count_min", st.count_min, "scene.structures[]");
      st.count_max = st.count_min;
      read_optional(e, "count_max", st.count_max, "scene.structures[]");
      s.structures.push_back(st);
    }
  }
  read_optional(j, "noise_sigma", s.noise_sigma, "scene");
  if (j.contains("intensity")) {
    s.intensity.clear();
    for (const auto& e : j["intensity"]) {
      require_known_keys(e, {"mean", "std"}, "scene.intensity[]");
      Intensity in;
      read_optional(e, "mean", in.mean, "scene.intensity[]");
      read_optional(e, "std", in.std, "scene.intensity[]");
      s.intensity.push_back(in);
    }
  }
  read_optional(j, "seed", s.seed, "scene");
  s.validate();
  return s;
}

namespace {

using Vec3 = std::array<double, 3>;

struct Placed {
  ShapeKind shape;
  Vec3 center{};
  Vec3 half{};     // ellipsoid semi-axes / box half-extents
  Vec3 dir{};      // tube direction
  double radius = 0;
  double length = 0;
};

bool contains(const Placed& s, const Vec3& p) {
  const Vec3 q{p[0] - s.center[0], p[1] - s.center[1], p[2] - s.center[2]};
  switch (s.shape) {
    case ShapeKind::ellipsoid: {
      double acc = 0;
      for (int a = 0; a < 3; ++a) acc += (q[a] / s.half[a]) * (q[a] / s.half[a]);
      return acc <= 1.0;
    }
    case ShapeKind::box:
      return std::abs(q[0]) <= s.half[0] && std::abs(q[1]) <= s.half[1] && std::abs(q[2]) <= s.half[2];
    case ShapeKind::tube: {
      double t = q[0] * s.dir[0] + q[1] * s.dir[1] + q[2] * s.dir[2];
      t = std::clamp(t, -s.length / 2, s.length / 2);
      double dist2 = 0;
      for (int a = 0; a < 3; ++a) {
        const double r = q[a] - t * s.dir[a];
        dist2 += r * r;
      }
      return dist2 <= s.radius * s.radius;
    }
  }
  return false;
}

Placed place(const StructureSpec& st, const std::array<std::size_t, 3>& grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> size(st.size_min, st.size_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr int kRetries = 64;
  const double min_extent = static_cast<double>(*std::min_element(grid.begin(), grid.end()));
  for (int attempt = 0; attempt < kRetries; ++attempt) {
    Placed p{};
    p.shape = st.shape;
    Vec3 reach{};
    if (st.shape == ShapeKind::tube) {
      p.radius = size(rng) * min_extent;
      p.length = 0.7 * min_extent;
      double norm = 0;
      for (auto& c : p.dir) {
        c = gauss(rng);
        norm += c * c;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;
      for (int a = 0; a < 3; ++a) {
        p.dir[a] /= norm;
        reach[a] = std::abs(p.dir[a]) * p.length / 2 + p.radius;
      }
    } else {
      for (int a = 0; a < 3; ++a) {
        p.half[a] = size(rng) * static_cast<double>(grid[a]);
        reach[a] = p.half[a];
      }
    }
    bool fits = true;
    for (int a = 0; a < 3; ++a) {
      const double lo = reach[a];
      const double hi = static_cast<double>(grid[a]) - 1.0 - reach[a];
      if (hi < lo) {
        fits = false;
        break;
      }
      p.center[a] = lo + (hi - lo) * unit(rng);
    }
    if (fits) return p;
  }
  throw GenerationError("could not place a " + to_string(st.shape) + " of class " + std::to_string(st.class_id) +
                        " inside the grid after " + std::to_string(kRetries) + " attempts");
}

}  // namespace

VolumeSample generate_one(const SceneSpec& spec, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, "sample/" + std::to_string(index)));
  const std::array<std::size_t, 3> grid{spec.h, spec.w, spec.d};
  const std::size_t n = spec.h * spec.w * spec.d;
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::int32_t> labels(n, 0);
  std::vector<double> level(n, spec.intensity[0].mean + spec.intensity[0].std * gauss(rng));
  for (const auto& st : spec.structures) {
    std::uniform_int_distribution<std::size_t> count(st.count_min, st.count_max);
    const std::size_t k = count(rng);
    for (std::size_t i = 0; i < k; ++i) {
      const Placed p = place(st, grid, rng);
      const auto& in = spec.intensity[static_cast<std::size_t>(st.class_id)];
      const double value = in.mean + in.std * gauss(rng);
      std::size_t v = 0;
      for (std::size_t a = 0; a < spec.h; ++a) {
        for (std::size_t b = 0; b < spec.w; ++b) {
          for (std::size_t c = 0; c < spec.d; ++c, ++v) {
            if (contains(p, {static_cast<double>(a), static_cast<double>(b), static_cast<double>(c)})) {
              labels[v] = st.class_id;
              level[v] = value;
            }
          }
        }
      }
    }
  }
  std::vector<float> image(n);
  for (std::size_t v = 0; v < n; ++v) {
    image[v] = static_cast<float>(level[v] + (spec.noise_sigma > 0 ? spec.noise_sigma * gauss(rng) : 0.0));
  }
  return VolumeSample{Tensor<float>(Shape{1, spec.h, spec.w, spec.d}, std::move(image)),
                      loss::LabelVolume(spec.h, spec.w, spec.d, spec.num_classes, std::move(labels))};
}

std::vector<VolumeSample> generate(const SceneSpec& spec, std::size_t n) {
  if (n == 0) throw UsageError("generate: n must be >= 1");
  std::vector<VolumeSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(spec, i));
  return out;
}

namespace {

// Source coordinate (in voxels) for each output voxel.
template <typename Map>
VolumeSample resample(const VolumeSample& sample, Map&& source_of) {
  const auto& lab = sample.labels;
  const std::size_t H = lab.h(), W = lab.w(), D = lab.d();
  const float* img = sample.image.raw();
  const auto labels = lab.labels();
  std::vector<float> out_img(H * W * D);
  std::vector<std::int32_t> out_lab(H * W * D);
  auto clampi = [](double x, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(n - 1)));
  };
  auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return (a * W + b) * D + c; };
  std::size_t v = 0;
  for (std::size_t a = 0; a < H; ++a) {
    for (std::size_t b = 0; b < W; ++b) {
      for (std::size_t c = 0; c < D; ++c, ++v) {
        std::array<double, 3> src = source_of(a, b, c, v);
        const std::array<std::size_t, 3> dims{H, W, D};
        for (int k = 0; k < 3; ++k) src[k] = std::clamp(src[k], 0.0, static_cast<double>(dims[k] - 1));
        out_lab[v] = labels[at(clampi(std::round(src[0]), H), clampi(std::round(src[1]), W),
                               clampi(std::round(src[2]), D))];
        std::array<std::size_t, 3> lo{}, hi{};
        std::array<double, 3> f{};
        for (int k = 0; k < 3; ++k) {
          lo[k] = static_cast<std::size_t>(std::floor(src[k]));
          hi[k] = std::min(lo[k] + 1, dims[k] - 1);
          f[k] = src[k] - static_cast<double>(lo[k]);
        }
        double acc = 0;
        for (int corner = 0; corner < 8; ++corner) {
          const std::size_t ia = corner & 4 ? hi[0] : lo[0];
          const std::size_t ib = corner & 2 ? hi[1] : lo[1];
          const std::size_t ic = corner & 1 ? hi[2] : lo[2];
          const double wt = (corner & 4 ? f[0] : 1 - f[0]) * (corner & 2 ? f[1] : 1 - f[1]) *
                            (corner & 1 ? f[2] : 1 - f[2]);
          if (wt != 0.0) acc += wt * img[at(ia, ib, ic)];
        }
        out_img[v] = static_cast<float>(acc);
      }
    }
  }
  return VolumeSample{Tensor<float>(sample.image.shape(), std::move(out_img)),
                      loss::LabelVolume(H, W, D, lab.num_classes(), std::move(out_lab))};
}

double snap(double x) {
  for (double target : {-1.0, 0.0, 1.0}) {
    if (std::abs(x - target) < 1e-12) return target;
  }
  return x;
}

}  // namespace

VolumeSample rotate(const VolumeSample& sample, int axis, double angle_deg) {
  if (axis < 0 || axis > 2) throw ConfigError("rotate: axis must be 0, 1 or 2");
  if (angle_deg == 0.0) return sample;
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double cs = snap(std::cos(rad));
  const double sn = snap(std::sin(rad));
  // Rotation in the plane of axes (u, v); source = R^-1 (p - centre) + centre.
  const int u = axis == 0 ? 1 : 0;
  const int v = axis == 2 ? 1 : 2;
  const std::array<double, 3> centre{(static_cast<double>(sample.labels.h()) - 1) / 2,
                                     (static_cast<double>(sample.labels.w()) - 1) / 2,
                                     (static_cast<double>(sample.labels.d()) - 1) / 2};
  return resample(sample, [&](std::size_t a, std::size_t b, std::size_t c, std::size_t) {
    std::array<double, 3> p{static_cast<double>(a) - centre[0], static_cast<double>(b) - centre[1],
                            static_cast<double>(c) - centre[2]};
    std::array<double, 3> q = p;
    q[u] = cs * p[u] + sn * p[v];
    q[v] = -sn * p[u] + cs * p[v];
    for (int k = 0; k < 3; ++k) q[k] += centre[k];
    return q;
  });
}

VolumeSample augment_rotate(const VolumeSample& sample, double max_angle_deg, std::mt19937_64& rng) {
  if (!(max_angle_deg >= 0.0) || max_angle_deg > 30.0) {
    throw ConfigError("augment_rotate: max angle must be in [0, 30] degrees");
  }
  std::uniform_int_distribution<int> axis(0, 2);
  std::uniform_real_distribution<double> angle(-max_angle_deg, max_angle_deg);
  const int ax = axis(rng);
  const double a = angle(rng);
  return rotate(sample, ax, a);
}

namespace {

// In-place separable Gaussian blur with clamped borders.
void gaussian_blur(std::vector<double>& f, std::size_t H, std::size_t W, std::size_t D, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double k = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = k;
    norm += k;
  }
  for (auto& k : kernel) k /= norm;
  const std::array<std::size_t, 3> dims{H, W, D};
  const std::array<std::size_t, 3> strides{W * D, D, 1};
  std::vector<double> tmp(f.size());
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = static_cast<std::ptrdiff_t>(dims[axis]);
    const std::size_t st = strides[axis];
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto pos = static_cast<std::ptrdiff_t>((i / st) % dims[axis]);
      const std::size_t base = i - static_cast<std::size_t>(pos) * st;
      double acc = 0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t q = std::clamp<std::ptrdiff_t>(pos + k, 0, n - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * f[base + static_cast<std::size_t>(q) * st];
      }
      tmp[i] = acc;
    }
    f.swap(tmp);
  }
}

}  // namespace

DisplacementField elastic_field(std::size_t h, std::size_t w, std::size_t d, double alpha, double sigma,
                                std::mt19937_64& rng) {
  if (!(alpha >= 0.0)) throw ConfigError("elastic: alpha must be >= 0");
  if (!(sigma > 0.0)) throw ConfigError("elastic: sigma must be > 0");
  const std::size_t n = h * w * d;
  DisplacementField field{h, w, d, {}, {}, {}};
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (auto* comp : {&field.dh, &field.dw, &field.dd}) {
    comp->resize(n);
    for (auto& x : *comp) x = noise(rng);
    gaussian_blur(*comp, h, w, d, sigma);
    double sq = 0;
    for (double x : *comp) sq += x * x;
    const double rms = std::sqrt(sq / static_cast<double>(n));
    const double scale = rms > 0 ? alpha / rms : 0.0;
    for (auto& x : *comp) x *= scale;
  }
  return field;
}

VolumeSample warp(const VolumeSample& sample, const DisplacementField& field) {
  const auto& lab = sample.labels;
  if (field.h != lab.h() || field.w != lab.w() || field.d != lab.d()) {
    throw ConfigError("warp: displacement field grid differs from the sample grid");
  }
  return resample(sample, [&](std::size_t a, std::size_t b, std::size_t c, std::size_t v) {
    return std::array<double, 3>{static_cast<double>(a) + field.dh[v], static_cast<double>(b) + field.dw[v],
                                 static_cast<double>(c) + field.dd[v]};
  });
}

VolumeSample augment_elastic(const VolumeSample& sample, double alpha, double sigma, std::mt19937_64& rng) {
  const auto& lab = sample.labels;
  const DisplacementField field = elastic_field(lab.h(), lab.w(), lab.d(), alpha, sigma, rng);
  if (alpha == 0.0) return sample;
  return warp(sample, field);
}

namespace {

std::vector<char> encode_sample(const VolumeSample& s) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, s.image);
  const auto labels = s.labels.labels();
  std::vector<float> as_float(labels.begin(), labels.end());
  write_tensor(os, Tensor<float>(s.image.shape(), std::move(as_float)));
  const std::string str = os.str();
  return {str.begin(), str.end()};
}

VolumeSample decode_sample(const std::vector<char>& bytes, std::size_t num_classes, const std::string& name) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  Tensor<float> image = read_tensor<float>(is);
  Tensor<float> labels = read_tensor<float>(is);
  const Shape s = image.shape();
  if (labels.shape() != s || s.c != 1) throw InputError(name + ": image and label records disagree");
  std::vector<std::int32_t> ids(labels.numel());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const float v = labels[i];
    if (v != std::floor(v)) throw InputError(name + ": non-integer label value");
    ids[i] = static_cast<std::int32_t>(v);
  }
  return VolumeSample{std::move(image), loss::LabelVolume(s.h, s.w, s.d, num_classes, std::move(ids))};
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

DatasetManifest save_dataset(const std::filesystem::path& dir, const SceneSpec& scene,
                             const std::vector<VolumeSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.scene = scene;
  Json files = Json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.rc3d", i);
    const auto bytes = encode_sample(samples[i]);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
    const std::uint32_t crc = crc32(bytes);
    m.files.emplace_back(name);
    m.checksums.push_back(crc);
    files.push_back(Json{{"file", name}, {"crc32", hex32(crc)}});
  }
  const Json manifest{{"format_version", 1},
                      {"scene", to_json(scene)},
                      {"seed", scene.seed},
                      {"count", samples.size()},
                      {"samples", files},
                      {"version", version()}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << canonical_text(manifest);
  return m;
}

std::vector<VolumeSample> load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest) {
  const auto bytes = read_file(dir / "manifest.json");
  const Json j = parse_json_text(std::string(bytes.begin(), bytes.end()), (dir / "manifest.json").string());
  DatasetManifest m;
  try {
    m.scene = scene_spec_from_json(j.at("scene"));
    for (const auto& e : j.at("samples")) {
      m.files.push_back(e.at("file").get<std::string>());
      m.checksums.push_back(static_cast<std::uint32_t>(std::stoul(e.at("crc32").get<std::string>(), nullptr, 16)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed dataset manifest: " + std::string(e.what()));
  }
  std::vector<VolumeSample> samples;
  for (std::size_t i = 0; i < m.files.size(); ++i) {
    const auto path = dir / m.files[i];
    const auto data = read_file(path);
    const std::uint32_t crc = crc32(data);
    if (crc != m.checksums[i]) {
      throw InputError("checksum mismatch for " + path.string() + ": manifest " + hex32(m.checksums[i]) +
                       ", file " + hex32(crc));
    }
    samples.push_back(decode_sample(data, m.scene.num_classes, path.string()));
  }
  if (manifest) *manifest = std::move(m);
  return samples;
}

}  // namespace rc3d::data
