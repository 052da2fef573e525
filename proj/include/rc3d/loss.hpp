#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

namespace rc3d::loss {

// Integer class map over (h, w, d), row-major like Tensor.
class LabelVolume {
 public:
  LabelVolume(std::size_t h, std::size_t w, std::size_t d, std::size_t num_classes, std::vector<std::int32_t> labels);
  static LabelVolume filled(std::size_t h, std::size_t w, std::size_t d, std::size_t num_classes, std::int32_t label);

  [[nodiscard]] std::size_t h() const { return h_; }
  [[nodiscard]] std::size_t w() const { return w_; }
  [[nodiscard]] std::size_t d() const { return d_; }
  [[nodiscard]] std::size_t size() const { return labels_.size(); }
  [[nodiscard]] std::size_t num_classes() const { return num_classes_; }
  [[nodiscard]] std::span<const std::int32_t> labels() const { return labels_; }
  [[nodiscard]] std::int32_t at(std::size_t h, std::size_t w, std::size_t d) const {
    return labels_[(h * w_ + w) * d_ + d];
  }
  [[nodiscard]] std::vector<std::size_t> class_counts() const;
  [[nodiscard]] bool same_grid(const LabelVolume& o) const { return h_ == o.h_ && w_ == o.w_ && d_ == o.d_; }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  std::size_t h_, w_, d_, num_classes_;
  std::vector<std::int32_t> labels_;
};

// Per-class cross-entropy weights.
struct ClassWeights {
  std::vector<double> w;
};

// w_c = median(freq of present classes) / freq_c, absent classes 0. Frequencies
// are aggregated over the whole collection.
ClassWeights median_frequency_weights(std::span<const LabelVolume> volumes);
ClassWeights median_frequency_weights(const LabelVolume& volume);

struct LossOptions {
  double lambda_ce = 1.0;
  double lambda_dice = 1.0;
  double dice_smooth = 1e-5;
};

// lambda_ce * weighted CE + lambda_dice * (1 - mean soft Dice).
//
// CE is averaged with per-voxel weight w[target] and normalized by the sum of
// those weights. Soft Dice per class c is (2 sum p_c t_c + s) / (sum p_c +
// sum t_c + s) over softmax probabilities p, averaged over the classes present
// in the target.
template <typename T>
Var<T> combined_loss(Var<T> logits, const LabelVolume& target, const ClassWeights& weights,
                     const LossOptions& options = {});

// Per-voxel argmax over channels.
template <typename T>
LabelVolume predict_labels(const Tensor<T>& logits);

struct DiceReport {
  // nullopt where the class is absent from both prediction and target.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;  // over classes with a value
};

DiceReport dice_score(const LabelVolume& pred, const LabelVolume& target, std::size_t num_classes);

}  // namespace rc3d::loss
