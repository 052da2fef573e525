#include "rc3d/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rc3d/error.hpp"

namespace rc3d::loss {

LabelVolume::LabelVolume(std::size_t h, std::size_t w, std::size_t d, std::size_t num_classes,
                         std::vector<std::int32_t> labels)
    : h_(h), w_(w), d_(d), num_classes_(num_classes), labels_(std::move(labels)) {
  if (h == 0 || w == 0 || d == 0) throw InputError("label volume dims must be >= 1");
  if (num_classes == 0) throw InputError("label volume needs at least one class");
  if (labels_.size() != h * w * d) {
    throw InputError("label volume has " + std::to_string(labels_.size()) + " voxels, expected " +
                     std::to_string(h * w * d));
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes) {
      throw InputError("label " + std::to_string(labels_[i]) + " at voxel " + std::to_string(i) +
                       " is outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabelVolume LabelVolume::filled(std::size_t h, std::size_t w, std::size_t d, std::size_t num_classes,
                                std::int32_t label) {
  return LabelVolume(h, w, d, num_classes, std::vector<std::int32_t>(h * w * d, label));
}

std::vector<std::size_t> LabelVolume::class_counts() const {
  std::vector<std::size_t> counts(num_classes_, 0);
  for (auto l : labels_) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

ClassWeights median_frequency_weights(std::span<const LabelVolume> volumes) {
  if (volumes.empty()) throw UsageError("median_frequency_weights: no label volumes");
  const std::size_t k = volumes.front().num_classes();
  std::vector<double> counts(k, 0.0);
  double total = 0.0;
  for (const auto& v : volumes) {
    if (v.num_classes() != k) throw InputError("median_frequency_weights: class counts differ across volumes");
    const auto c = v.class_counts();
    for (std::size_t i = 0; i < k; ++i) counts[i] += static_cast<double>(c[i]);
    total += static_cast<double>(v.size());
  }
  if (total == 0.0) throw UsageError("median_frequency_weights: no voxels");
  std::vector<double> present;
  for (double c : counts) {
    if (c > 0) present.push_back(c / total);
  }
  std::sort(present.begin(), present.end());
  const std::size_t n = present.size();
  const double median = n % 2 ? present[n / 2] : 0.5 * (present[n / 2 - 1] + present[n / 2]);
  ClassWeights w;
  w.w.resize(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    if (counts[i] > 0) w.w[i] = median / (counts[i] / total);
  }
  return w;
}

ClassWeights median_frequency_weights(const LabelVolume& volume) {
  return median_frequency_weights(std::span<const LabelVolume>(&volume, 1));
}

template <typename T>
Var<T> combined_loss(Var<T> logits, const LabelVolume& target, const ClassWeights& weights,
                     const LossOptions& options) {
  const Shape s = logits.shape();
  const std::size_t k = s.c;
  const std::size_t n = s.spatial();
  if (s.h != target.h() || s.w != target.w() || s.d != target.d()) {
    throw InputError("combined_loss: logits " + s.str() + " do not match label grid [" + std::to_string(target.h()) +
                     "," + std::to_string(target.w()) + "," + std::to_string(target.d()) + "]");
  }
  if (target.num_classes() != k) {
    throw InputError("combined_loss: labels declare " + std::to_string(target.num_classes()) +
                     " classes, logits have " + std::to_string(k));
  }
  if (weights.w.size() != k) throw InputError("combined_loss: class weight vector has the wrong length");
  if (options.lambda_ce < 0 || options.lambda_dice < 0) throw ConfigError("combined_loss: lambdas must be >= 0");
  if (!(options.dice_smooth > 0)) throw ConfigError("combined_loss: dice smoothing must be positive");

  const T* z = logits.value().raw();
  const auto labels = target.labels();
  // Softmax in double regardless of T.
  std::vector<double> prob(k * n);
  std::vector<double> neg_log_p(n);
  for (std::size_t v = 0; v < n; ++v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(z[c * n + v]));
    double se = 0.0;
    for (std::size_t c = 0; c < k; ++c) se += std::exp(static_cast<double>(z[c * n + v]) - mx);
    const double lse = mx + std::log(se);
    for (std::size_t c = 0; c < k; ++c) prob[c * n + v] = std::exp(static_cast<double>(z[c * n + v]) - lse);
    neg_log_p[v] = lse - static_cast<double>(z[static_cast<std::size_t>(labels[v]) * n + v]);
  }

  double weight_sum = 0.0;
  double ce = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    const double wv = weights.w[static_cast<std::size_t>(labels[v])];
    weight_sum += wv;
    ce += wv * neg_log_p[v];
  }
  if (options.lambda_ce > 0 && weight_sum <= 0.0) {
    throw InputError("combined_loss: class weights are zero on every voxel of the target");
  }
  if (weight_sum > 0.0) ce /= weight_sum;

  const auto counts = target.class_counts();
  std::vector<double> inter(k, 0.0), psum(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t v = 0; v < n; ++v) {
      psum[c] += prob[c * n + v];
      if (static_cast<std::size_t>(labels[v]) == c) inter[c] += prob[c * n + v];
    }
  }
  std::size_t present = 0;
  double dice_sum = 0.0;
  const double eps = options.dice_smooth;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    ++present;
    dice_sum += (2.0 * inter[c] + eps) / (psum[c] + static_cast<double>(counts[c]) + eps);
  }
  const double dice_loss = 1.0 - dice_sum / static_cast<double>(present);
  const double value = options.lambda_ce * ce + options.lambda_dice * dice_loss;

  auto backward = [prob = std::move(prob), labels = std::vector<std::int32_t>(labels.begin(), labels.end()), w = weights.w, counts, inter, psum, k, n,
                   weight_sum, present, options, eps](std::span<const T> gout, std::span<std::span<T>> gin) {
    const double g0 = static_cast<double>(gout[0]);
    std::vector<double> gp(k);
    // dDice/dp and dCE/dz, then chain through the softmax Jacobian.
    std::vector<double> dice_coef_a(k, 0.0), dice_coef_b(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double u = psum[c] + static_cast<double>(counts[c]) + eps;
      // d/dp_cv [ (2I+eps)/u ] = (2 t_cv u - (2I+eps)) / u^2
      dice_coef_a[c] = 2.0 / u;
      dice_coef_b[c] = (2.0 * inter[c] + eps) / (u * u);
    }
    const double dice_scale = -options.lambda_dice / static_cast<double>(present);
    for (std::size_t v = 0; v < n; ++v) {
      const auto t = static_cast<std::size_t>(labels[v]);
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double tc = c == t ? 1.0 : 0.0;
        gp[c] = counts[c] == 0 ? 0.0 : dice_scale * (dice_coef_a[c] * tc - dice_coef_b[c]);
        dot += gp[c] * prob[c * n + v];
      }
      const double ce_w = weight_sum > 0.0 ? options.lambda_ce * w[t] / weight_sum : 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double p = prob[c * n + v];
        const double tc = c == t ? 1.0 : 0.0;
        const double dz = p * (gp[c] - dot) + ce_w * (p - tc);
        gin[0][c * n + v] += static_cast<T>(g0 * dz);
      }
    }
  };
  return logits.tape->record("combined_loss", Tensor<T>::scalar(static_cast<T>(value)), {logits}, backward);
}

template <typename T>
LabelVolume predict_labels(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  const std::size_t n = s.spatial();
  std::vector<std::int32_t> labels(n);
  const T* z = logits.raw();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.c; ++c) {
      if (z[c * n + v] > z[best * n + v]) best = c;
    }
    labels[v] = static_cast<std::int32_t>(best);
  }
  return LabelVolume(s.h, s.w, s.d, s.c, std::move(labels));
}

DiceReport dice_score(const LabelVolume& pred, const LabelVolume& target, std::size_t num_classes) {
  if (!pred.same_grid(target)) throw InputError("dice_score: prediction and target grids differ");
  std::vector<std::size_t> p(num_classes, 0), t(num_classes, 0), both(num_classes, 0);
  const auto a = pred.labels();
  const auto b = target.labels();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto pa = static_cast<std::size_t>(a[i]);
    const auto tb = static_cast<std::size_t>(b[i]);
    if (pa >= num_classes || tb >= num_classes) throw InputError("dice_score: label outside num_classes");
    ++p[pa];
    ++t[tb];
    if (pa == tb) ++both[pa];
  }
  DiceReport r;
  r.per_class.resize(num_classes);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (p[c] + t[c] == 0) continue;
    const double dice = 2.0 * static_cast<double>(both[c]) / static_cast<double>(p[c] + t[c]);
    r.per_class[c] = dice;
    sum += dice;
    ++counted;
  }
  r.mean = counted ? sum / static_cast<double>(counted) : 1.0;
  return r;
}

#define RC3D_INSTANTIATE(T)                                                                              \
  template Var<T> combined_loss<T>(Var<T>, const LabelVolume&, const ClassWeights&, const LossOptions&); \
  template LabelVolume predict_labels<T>(const Tensor<T>&);

RC3D_INSTANTIATE(float)
RC3D_INSTANTIATE(double)
#undef RC3D_INSTANTIATE

}  // namespace rc3d::loss
