#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rc3d/data.hpp"
#include "rc3d/json_util.hpp"
#include "rc3d/loss.hpp"
#include "rc3d/net.hpp"

namespace rc3d::train {

struct AugmentConfig {
  bool rotate = true;
  double max_angle_deg = 15.0;
  bool elastic = true;
  double alpha = 4.0;
  double sigma = 4.0;

  [[nodiscard]] bool any() const { return rotate || elastic; }
};

struct TrainConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.1;
  double rel_tol = 1e-3;
  double min_lr = 1e-5;
  std::size_t max_epochs = 200;
  // Values above 1 accumulate gradients over that many samples per step and
  // require allow_batch_override.
  std::size_t batch_size = 1;
  bool allow_batch_override = false;
  AugmentConfig augment;
  double lambda_ce = 1.0;
  double lambda_dice = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

// Classic momentum: v <- momentum * v + g; p <- p - lr * v. Throws UsageError
// when the three lists disagree in length or shape.
template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, std::span<const Tensor<T>> grads, std::vector<Tensor<T>>& velocity,
              double lr, double momentum);

struct PlateauOptions {
  std::size_t patience = 5;
  double factor = 0.1;
  double min_lr = 1e-5;
  double rel_tol = 1e-3;
};

// Reduce-on-plateau. An eval improves when it beats the best loss so far by
// more than rel_tol (relative); after `patience` consecutive non-improving
// evals the lr is multiplied by `factor` (floored at min_lr) and the counter
// resets. Once the lr sits at min_lr, the next expiry marks it exhausted.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, PlateauOptions options);

  // Returns the lr to use after this eval.
  double observe(double val_loss);
  [[nodiscard]] double lr() const { return lr_; }
  [[nodiscard]] bool exhausted() const { return exhausted_; }
  // Whether the last observe() hit the patience limit.
  [[nodiscard]] bool expired() const { return expired_; }
  [[nodiscard]] std::size_t bad_count() const { return bad_; }
  [[nodiscard]] double best() const { return best_; }

 private:
  double lr_;
  PlateauOptions opt_;
  double best_;
  std::size_t bad_ = 0;
  bool exhausted_ = false;
  bool expired_ = false;
};

// Replays `history` from `current_lr` and returns the lr after its last entry.
double plateau_scheduler(std::span<const double> history, const PlateauOptions& options, double current_lr);

struct EvalResult {
  double loss = 0.0;
  // Mean over samples where the class is defined; NaN when never defined.
  std::vector<double> per_class_dice;
  // Mean over foreground classes (1..C-1) with a value.
  double mean_dice = 0.0;
};

// Means over samples. Foreground mean Dice ignores the background class.
template <typename T>
EvalResult evaluate(const net::Network<T>& network, std::span<const data::VolumeSample> samples,
                    const loss::ClassWeights& weights, const loss::LossOptions& options);

struct EvalRow {
  std::size_t epoch = 0;  // 0 = before training
  double train_loss = 0.0;  // NaN for the initial row
  double val_loss = 0.0;
  std::vector<double> val_dice;
  double val_mean_dice = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::vector<EvalRow> rows;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  std::string checkpoint_path;

  // Equality of everything except wall time.
  [[nodiscard]] bool same_results(const RunRecord& other) const;
};

void write_csv(std::ostream& os, const RunRecord& record);
Json to_json(const RunRecord& record);

struct FitOptions {
  // Best-validation checkpoint; none written when empty.
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const EvalRow&)> on_eval;
};

// Trains `network` in place; on return it holds the best-validation
// parameters. Class weights come from the training labels.
template <typename T>
RunRecord fit(net::Network<T>& network, std::span<const data::VolumeSample> train_set,
              std::span<const data::VolumeSample> val_set, const TrainConfig& config,
              const FitOptions& options = {});

struct DataSplit {
  std::vector<data::VolumeSample> train;
  std::vector<data::VolumeSample> val;
  std::vector<data::VolumeSample> test;
};

struct AblationRow {
  std::string config;  // "baseline" or "<block>-<placement>"
  net::Recalib block = net::Recalib::none;
  std::string placement = "none";
  double mean_dice = 0.0;  // test set, best-validation parameters
  std::vector<double> per_class_dice;
  std::size_t params = 0;
  double delta_params_pct = 0.0;  // relative to the baseline spec
  std::size_t epochs = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct AblationOptions {
  // Per-configuration run directories (run.csv, summary.json, best.rc3k).
  std::optional<std::filesystem::path> output_dir;
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const std::string& config, const EvalRow&)> on_eval;
};

// "none" yields one baseline row regardless of `blocks`; every other
// placement yields one row per block kind. All rows share seed and split.
std::vector<AblationRow> ablation_run(const net::NetworkSpec& base, const std::vector<std::string>& placements,
                                      const std::vector<net::Recalib>& blocks, const TrainConfig& config,
                                      const DataSplit& split, const AblationOptions& options = {});

void write_csv(std::ostream& os, const std::vector<AblationRow>& rows);
std::string format_table(const std::vector<AblationRow>& rows);

}  // namespace rc3d::train
