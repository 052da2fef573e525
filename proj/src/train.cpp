#include "rc3d/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "rc3d/checkpoint.hpp"
#include "rc3d/runtime.hpp"
#include "rc3d/tape.hpp"

namespace rc3d::train {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid train config: " + what); };
  if (!(lr0 > 0) || !std::isfinite(lr0)) fail("lr0 must be > 0");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0, 1)");
  if (plateau_patience < 1) fail("plateau_patience must be >= 1");
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
  if (!(rel_tol >= 0)) fail("rel_tol must be >= 0");
  if (!(min_lr > 0) || min_lr > lr0) fail("min_lr must be in (0, lr0]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (batch_size != 1 && !allow_batch_override) fail("batch_size other than 1 requires allow_batch_override");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (lambda_ce < 0 || lambda_dice < 0 || lambda_ce + lambda_dice == 0) {
    fail("lambda_ce and lambda_dice must be >= 0 and not both 0");
  }
  if (augment.rotate && !(augment.max_angle_deg >= 0 && augment.max_angle_deg <= 30)) {
    fail("augment.max_angle_deg must be in [0, 30]");
  }
  if (augment.elastic && !(augment.alpha >= 0 && augment.sigma > 0)) {
    fail("augment.alpha must be >= 0 and augment.sigma > 0");
  }
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr0", c.lr0},
              {"momentum", c.momentum},
              {"plateau_patience", c.plateau_patience},
              {"plateau_factor", c.plateau_factor},
              {"rel_tol", c.rel_tol},
              {"min_lr", c.min_lr},
              {"max_epochs", c.max_epochs},
              {"batch_size", c.batch_size},
              {"allow_batch_override", c.allow_batch_override},
              {"augment",
               {{"rotate", c.augment.rotate},
                {"max_angle_deg", c.augment.max_angle_deg},
                {"elastic", c.augment.elastic},
                {"alpha", c.augment.alpha},
                {"sigma", c.augment.sigma}}},
              {"lambda_ce", c.lambda_ce},
              {"lambda_dice", c.lambda_dice},
              {"seed", c.seed},
              {"eval_every", c.eval_every}};
}

TrainConfig train_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"lr0", "momentum", "plateau_patience", "plateau_factor", "rel_tol", "min_lr", "max_epochs",
                      "batch_size", "allow_batch_override", "augment", "lambda_ce", "lambda_dice", "seed",
                      "eval_every"},
                     "train");
  TrainConfig c;
  read_optional(j, "lr0", c.lr0, "train");
  read_optional(j, "momentum", c.momentum, "train");
  read_optional(j, "plateau_patience", c.plateau_patience, "train");
  read_optional(j, "plateau_factor", c.plateau_factor, "train");
  read_optional(j, "rel_tol", c.rel_tol, "train");
  read_optional(j, "min_lr", c.min_lr, "train");
  read_optional(j, "max_epochs", c.max_epochs, "train");
  read_optional(j, "batch_size", c.batch_size, "train");
  read_optional(j, "allow_batch_override", c.allow_batch_override, "train");
  if (j.contains("augment")) {
    const Json& a = j["augment"];
    require_known_keys(a, {"rotate", "max_angle_deg", "elastic", "alpha", "sigma"}, "train.augment");
    read_optional(a, "rotate", c.augment.rotate, "train.augment");
    read_optional(a, "max_angle_deg", c.augment.max_angle_deg, "train.augment");
    read_optional(a, "elastic", c.augment.elastic, "train.augment");
    read_optional(a, "alpha", c.augment.alpha, "train.augment");
    read_optional(a, "sigma", c.augment.sigma, "train.augment");
  }
  read_optional(j, "lambda_ce", c.lambda_ce, "train");
  read_optional(j, "lambda_dice", c.lambda_dice, "train");
  read_optional(j, "seed", c.seed, "train");
  read_optional(j, "eval_every", c.eval_every, "train");
  c.validate();
  return c;
}

template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, std::span<const Tensor<T>> grads, std::vector<Tensor<T>>& velocity,
              double lr, double momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw UsageError("sgd_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(velocity.size()) + " velocities");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape s = params[i].shape();
    if (grads[i].shape() != s || velocity[i].shape() != s) {
      throw UsageError("sgd_step: shape mismatch at parameter " + std::to_string(i) + " (" + s.str() + ")");
    }
    std::vector<T> v = velocity[i].to_vector();
    std::vector<T> p = params[i].to_vector();
    const T* g = grads[i].raw();
    const auto m = static_cast<T>(momentum);
    const auto step = static_cast<T>(lr);
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = m * v[k] + g[k];
      p[k] -= step * v[k];
    }
    velocity[i] = Tensor<T>(s, std::move(v));
    params[i] = Tensor<T>(s, std::move(p));
  }
}

PlateauScheduler::PlateauScheduler(double lr, PlateauOptions options)
    : lr_(lr), opt_(options), best_(std::numeric_limits<double>::infinity()) {
  if (opt_.patience < 1) throw ConfigError("plateau scheduler: patience must be >= 1");
  if (!(opt_.factor > 0 && opt_.factor < 1)) throw ConfigError("plateau scheduler: factor must be in (0, 1)");
}

double PlateauScheduler::observe(double val_loss) {
  expired_ = false;
  const bool improved = std::isinf(best_) ? val_loss < best_ : val_loss < best_ - opt_.rel_tol * std::abs(best_);
  if (improved) {
    best_ = val_loss;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ < opt_.patience) return lr_;
  bad_ = 0;
  expired_ = true;
  if (lr_ <= opt_.min_lr) {
    exhausted_ = true;
  } else {
    lr_ = std::max(lr_ * opt_.factor, opt_.min_lr);
  }
  return lr_;
}

double plateau_scheduler(std::span<const double> history, const PlateauOptions& options, double current_lr) {
  // Only the patience counter matters here; reductions before the last eval
  // are already folded into current_lr.
  PlateauScheduler s(1.0, {options.patience, options.factor, 0.5, options.rel_tol});
  for (double loss : history) s.observe(loss);
  if (history.empty() || !s.expired()) return current_lr;
  return std::max(current_lr * options.factor, options.min_lr);
}

namespace {

template <typename T>
Tensor<T> image_as(const data::VolumeSample& s) {
  if constexpr (std::is_same_v<T, float>) {
    return s.image;
  } else {
    return s.image.template cast<T>();
  }
}

std::vector<loss::LabelVolume> labels_of(std::span<const data::VolumeSample> samples) {
  std::vector<loss::LabelVolume> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.labels);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

template <typename T>
EvalResult evaluate(const net::Network<T>& network, std::span<const data::VolumeSample> samples,
                    const loss::ClassWeights& weights, const loss::LossOptions& options) {
  if (samples.empty()) throw UsageError("evaluate: no samples");
  const std::size_t k = network.spec().num_classes;
  EvalResult r;
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  Tape<T> tape;
  for (const auto& s : samples) {
    tape.reset();
    const auto pass = network.forward(tape, image_as<T>(s));
    r.loss += static_cast<double>(loss::combined_loss(pass.logits, s.labels, weights, options).value().item());
    const auto dice = loss::dice_score(loss::predict_labels(pass.logits.value()), s.labels, k);
    for (std::size_t c = 0; c < k; ++c) {
      if (dice.per_class[c]) {
        sum[c] += *dice.per_class[c];
        ++count[c];
      }
    }
  }
  r.loss /= static_cast<double>(samples.size());
  r.per_class_dice.resize(k);
  double fg = 0.0;
  std::size_t fg_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    r.per_class_dice[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : std::nan("");
    if (c > 0 && count[c]) {
      fg += r.per_class_dice[c];
      ++fg_n;
    }
  }
  r.mean_dice = fg_n ? fg / static_cast<double>(fg_n) : 0.0;
  return r;
}

bool RunRecord::same_results(const RunRecord& o) const {
  if (rows.size() != o.rows.size() || best_epoch != o.best_epoch || stop_reason != o.stop_reason) return false;
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  if (!same(best_val_loss, o.best_val_loss)) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = o.rows[i];
    if (a.epoch != b.epoch || !same(a.train_loss, b.train_loss) || !same(a.val_loss, b.val_loss) ||
        !same(a.val_mean_dice, b.val_mean_dice) || a.lr != b.lr || a.val_dice.size() != b.val_dice.size()) {
      return false;
    }
    for (std::size_t c = 0; c < a.val_dice.size(); ++c) {
      if (!same(a.val_dice[c], b.val_dice[c])) return false;
    }
  }
  return true;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Json num_json(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

}  // namespace

void write_csv(std::ostream& os, const RunRecord& record) {
  const std::size_t k = record.rows.empty() ? 0 : record.rows.front().val_dice.size();
  os << "epoch,train_loss,val_loss";
  for (std::size_t c = 0; c < k; ++c) os << ",val_dice_" << c;
  os << ",val_mean_dice,lr,wall_seconds\n";
  for (const auto& r : record.rows) {
    os << r.epoch << "," << num(r.train_loss) << "," << num(r.val_loss);
    for (double d : r.val_dice) os << "," << num(d);
    os << "," << num(r.val_mean_dice) << "," << num(r.lr) << "," << num(r.wall_seconds) << "\n";
  }
}

Json to_json(const RunRecord& record) {
  Json rows = Json::array();
  for (const auto& r : record.rows) {
    Json dice = Json::array();
    for (double d : r.val_dice) dice.push_back(num_json(d));
    rows.push_back(Json{{"epoch", r.epoch},
                        {"train_loss", num_json(r.train_loss)},
                        {"val_loss", r.val_loss},
                        {"val_dice", dice},
                        {"val_mean_dice", r.val_mean_dice},
                        {"lr", r.lr},
                        {"wall_seconds", r.wall_seconds}});
  }
  return Json{{"rows", rows},
              {"best_epoch", record.best_epoch},
              {"best_val_loss", num_json(record.best_val_loss)},
              {"stop_reason", record.stop_reason},
              {"checkpoint", record.checkpoint_path}};
}

template <typename T>
RunRecord fit(net::Network<T>& network, std::span<const data::VolumeSample> train_set,
              std::span<const data::VolumeSample> val_set, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (train_set.empty()) throw UsageError("fit: empty training set");
  if (val_set.empty()) throw UsageError("fit: empty validation set");
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_labels = labels_of(train_set);
  const loss::ClassWeights weights = loss::median_frequency_weights(train_labels);
  const loss::LossOptions loss_opts{config.lambda_ce, config.lambda_dice, 1e-5};

  auto& named = network.params();
  std::vector<Tensor<T>> params;
  std::vector<Tensor<T>> velocity;
  for (const auto& p : named) {
    params.push_back(p.value);
    velocity.push_back(Tensor<T>::zeros(p.value.shape()));
  }
  auto sync = [&] {
    for (std::size_t i = 0; i < named.size(); ++i) named[i].value = params[i];
  };
  std::vector<Tensor<T>> best = params;

  PlateauScheduler scheduler(config.lr0,
                             {config.plateau_patience, config.plateau_factor, config.min_lr, config.rel_tol});
  RunRecord record;
  record.best_val_loss = std::numeric_limits<double>::infinity();
  if (options.checkpoint_path) record.checkpoint_path = options.checkpoint_path->string();

  auto run_eval = [&](std::size_t epoch, double train_loss) {
    EvalResult ev;
    try {
      ev = evaluate(network, val_set, weights, loss_opts);
    } catch (const NumericError& e) {
      throw NumericError("non-finite values evaluating epoch " + std::to_string(epoch) + ", lr " +
                         num(scheduler.lr()) + ": " + e.what());
    }
    EvalRow row{epoch, train_loss, ev.loss, ev.per_class_dice, ev.mean_dice, scheduler.lr(), seconds_since(t0)};
    if (ev.loss < record.best_val_loss) {
      record.best_val_loss = ev.loss;
      record.best_epoch = epoch;
      best = params;
      if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, network);
    }
    if (epoch > 0) scheduler.observe(ev.loss);
    record.rows.push_back(std::move(row));
    if (options.on_eval) options.on_eval(record.rows.back());
  };

  run_eval(0, std::nan(""));
  record.stop_reason = "max_epochs";

  std::mt19937_64 aug_rng(derive_seed(config.seed, "augment"));
  std::vector<std::size_t> order(train_set.size());
  std::vector<Tensor<T>> accum(params.size());
  Tape<T> tape;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = scheduler.lr();
    double epoch_loss = 0.0;
    std::size_t pending = 0;
    std::vector<std::vector<T>> acc;
    for (std::size_t step = 0; step < order.size(); ++step) {
      data::VolumeSample sample = train_set[order[step]];
      if (config.augment.rotate && config.augment.max_angle_deg > 0) {
        sample = data::augment_rotate(sample, config.augment.max_angle_deg, aug_rng);
      }
      if (config.augment.elastic && config.augment.alpha > 0) {
        sample = data::augment_elastic(sample, config.augment.alpha, config.augment.sigma, aug_rng);
      }
      const auto where = [&] {
        return "epoch " + std::to_string(epoch) + ", sample " + std::to_string(order[step]) + ", lr " + num(lr);
      };
      if (acc.empty()) {
        acc.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) acc[i].assign(params[i].numel(), T(0));
      }
      try {
        tape.reset();
        const auto pass = network.forward(tape, image_as<T>(sample));
        const auto l = loss::combined_loss(pass.logits, sample.labels, weights, loss_opts);
        const double lv = static_cast<double>(l.value().item());
        if (!std::isfinite(lv)) throw NumericError("non-finite loss at " + where());
        epoch_loss += lv;
        tape.backward(l);
        for (std::size_t i = 0; i < params.size(); ++i) {
          const Tensor<T> g = tape.grad(pass.params[i]);
          const T* gp = g.raw();
          for (std::size_t k = 0; k < acc[i].size(); ++k) acc[i][k] += gp[k];
        }
      } catch (const NumericError& e) {
        const std::string what = e.what();
        if (what.starts_with("non-finite loss at")) throw;
        throw NumericError("non-finite values at " + where() + ": " + what);
      }
      ++pending;
      if (pending == config.batch_size || step + 1 == order.size()) {
        const T inv = T(1) / static_cast<T>(pending);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (pending > 1) {
            for (auto& x : acc[i]) x *= inv;
          }
          accum[i] = Tensor<T>(params[i].shape(), std::move(acc[i]));
        }
        acc.clear();
        pending = 0;
        try {
          sgd_step<T>(params, accum, velocity, lr, config.momentum);
        } catch (const NumericError& e) {
          throw NumericError("parameters diverged at " + where() + ": " + e.what());
        }
        sync();
      }
    }
    if (epoch % config.eval_every == 0 || epoch == config.max_epochs) {
      run_eval(epoch, epoch_loss / static_cast<double>(order.size()));
      if (scheduler.exhausted()) {
        record.stop_reason = "lr_exhausted";
        break;
      }
    }
  }
  params = best;
  sync();
  return record;
}

std::vector<AblationRow> ablation_run(const net::NetworkSpec& base, const std::vector<std::string>& placements,
                                      const std::vector<net::Recalib>& blocks, const TrainConfig& config,
                                      const DataSplit& split, const AblationOptions& options) {
  config.validate();
  if (split.test.empty()) throw UsageError("ablation_run: empty test set");
  struct Item {
    std::string name;
    net::Recalib block;
    std::string placement;
  };
  std::vector<Item> items;
  for (const auto& p : placements) {
    if (p == "none") {
      items.push_back({"baseline", net::Recalib::none, "none"});
      continue;
    }
    net::placement_from_name(p);
    for (auto b : blocks) {
      if (b == net::Recalib::none) throw ConfigError("ablation_run: block kind 'none' needs placement 'none'");
      items.push_back({net::to_string(b) + "-" + p, b, p});
    }
  }
  const net::NetworkSpec baseline = base.with_recalib(net::Recalib::none, {});
  const std::size_t base_params = net::count_parameters(net::Network<float>::build(baseline, config.seed)).total;
  const auto weights = loss::median_frequency_weights(labels_of(split.train));
  const loss::LossOptions loss_opts{config.lambda_ce, config.lambda_dice, 1e-5};

  std::vector<AblationRow> rows;
  for (const auto& item : items) {
    const net::NetworkSpec spec = item.block == net::Recalib::none
                                      ? baseline
                                      : base.with_recalib(item.block, net::placement_from_name(item.placement));
    auto network = net::Network<float>::build(spec, config.seed);
    FitOptions fo;
    std::optional<std::filesystem::path> dir;
    if (options.output_dir) {
      dir = *options.output_dir / item.name;
      std::filesystem::create_directories(*dir);
      fo.checkpoint_path = *dir / "best.rc3k";
    }
    if (options.on_eval) fo.on_eval = [&](const EvalRow& r) { options.on_eval(item.name, r); };
    const auto t0 = std::chrono::steady_clock::now();
    const RunRecord rec = fit(network, split.train, split.val, config, fo);
    const EvalResult test = evaluate(network, split.test, weights, loss_opts);
    AblationRow row;
    row.config = item.name;
    row.block = item.block;
    row.placement = item.placement;
    row.mean_dice = test.mean_dice;
    row.per_class_dice = test.per_class_dice;
    row.params = net::count_parameters(network).total;
    row.delta_params_pct =
        100.0 * (static_cast<double>(row.params) - static_cast<double>(base_params)) / static_cast<double>(base_params);
    row.epochs = rec.rows.empty() ? 0 : rec.rows.back().epoch;
    row.wall_seconds = seconds_since(t0);
    row.seed = config.seed;
    if (dir) {
      std::ofstream csv(*dir / "run.csv");
      write_csv(csv, rec);
      Json summary = to_json(rec);
      summary["test_mean_dice"] = row.mean_dice;
      Json pcd = Json::array();
      for (double d : row.per_class_dice) pcd.push_back(num_json(d));
      summary["test_dice"] = pcd;
      summary["params"] = row.params;
      summary["delta_params_pct"] = row.delta_params_pct;
      std::ofstream js(*dir / "summary.json");
      js << canonical_text(summary);
    }
    rows.push_back(row);
    if (options.on_row) options.on_row(rows.back());
  }
  return rows;
}

void write_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  const std::size_t k = rows.empty() ? 0 : rows.front().per_class_dice.size();
  os << "config,block,placement,mean_dice";
  for (std::size_t c = 0; c < k; ++c) os << ",dice_" << c;
  os << ",params,delta_params_pct,epochs,wall_seconds,seed\n";
  for (const auto& r : rows) {
    os << r.config << "," << net::to_string(r.block) << "," << r.placement << "," << num(r.mean_dice);
    for (double d : r.per_class_dice) os << "," << num(d);
    os << "," << r.params << "," << num(r.delta_params_pct) << "," << r.epochs << "," << num(r.wall_seconds) << ","
       << r.seed << "\n";
  }
}

std::string format_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  const std::size_t k = rows.empty() ? 0 : rows.front().per_class_dice.size();
  os << std::left << std::setw(12) << "config" << std::right << std::setw(10) << "mean_dice";
  for (std::size_t c = 1; c < k; ++c) os << std::setw(9) << ("dice_" + std::to_string(c));
  os << std::setw(12) << "params" << std::setw(10) << "dparams%" << std::setw(8) << "epochs" << std::setw(10)
     << "seconds" << std::setw(8) << "seed" << "\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.config << std::right << std::setw(10) << std::setprecision(4)
       << r.mean_dice;
    for (std::size_t c = 1; c < k; ++c) os << std::setw(9) << std::setprecision(4) << r.per_class_dice[c];
    os << std::setw(12) << r.params << std::setw(10) << std::setprecision(3) << r.delta_params_pct << std::setw(8)
       << r.epochs << std::setw(10) << std::setprecision(1) << r.wall_seconds << std::setw(8) << r.seed << "\n";
  }
  return os.str();
}

template void sgd_step<float>(std::vector<Tensor<float>>&, std::span<const Tensor<float>>,
                              std::vector<Tensor<float>>&, double, double);
template void sgd_step<double>(std::vector<Tensor<double>>&, std::span<const Tensor<double>>,
                               std::vector<Tensor<double>>&, double, double);
template EvalResult evaluate<float>(const net::Network<float>&, std::span<const data::VolumeSample>,
                                    const loss::ClassWeights&, const loss::LossOptions&);
template EvalResult evaluate<double>(const net::Network<double>&, std::span<const data::VolumeSample>,
                                     const loss::ClassWeights&, const loss::LossOptions&);
template RunRecord fit<float>(net::Network<float>&, std::span<const data::VolumeSample>,
                              std::span<const data::VolumeSample>, const TrainConfig&, const FitOptions&);
template RunRecord fit<double>(net::Network<double>&, std::span<const data::VolumeSample>,
                               std::span<const data::VolumeSample>, const TrainConfig&, const FitOptions&);

}  // namespace rc3d::train
