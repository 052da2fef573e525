#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "rc3d/checkpoint.hpp"
#include "rc3d/cli.hpp"
#include "rc3d/runtime.hpp"
#include "rc3d/verify.hpp"

namespace rc3d::cli {

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::string> run_name;
  std::optional<std::string> data_dir;
  std::optional<std::string> preset;
  std::optional<std::string> recalib;
  std::optional<std::string> placement;
  std::optional<std::size_t> max_epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> data_seed;
  std::optional<double> lr0;
  std::optional<std::size_t> eval_every;
  bool no_augment = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "Experiment config (JSON)");
  cmd->add_option("--output-dir", o.output_dir, "Parent directory of run directories");
  cmd->add_option("--run-name", o.run_name, "Run directory name");
  cmd->add_option("--data-dir", o.data_dir, "Load samples from a gen-data directory");
  cmd->add_option("--data-seed", o.data_seed, "Scene generation seed");
}

void add_training(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--preset", o.preset, "Network ladder: full or desk");
  cmd->add_option("--max-epochs", o.max_epochs, "Epoch limit");
  cmd->add_option("--seed", o.seed, "Training seed (init, shuffling, augmentation)");
  cmd->add_option("--lr0", o.lr0, "Initial learning rate");
  cmd->add_option("--eval-every", o.eval_every, "Epochs between validation evals");
  cmd->add_flag("--no-augment", o.no_augment, "Disable rotation and elastic augmentation");
}

ExperimentConfig materialize(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.run_name) c.run_name = *o.run_name;
  if (o.data_dir) c.dataset.data_dir = *o.data_dir;
  if (o.data_seed) c.scene.seed = *o.data_seed;
  if (o.preset) {
    net::NetworkSpec base;
    if (*o.preset == "full") {
      base = net::NetworkSpec::full();
    } else if (*o.preset == "desk") {
      base = net::NetworkSpec::desk();
    } else {
      throw ConfigError("unknown preset '" + *o.preset + "' (valid: full, desk)");
    }
    base.num_classes = c.network.num_classes;
    base.in_channels = c.network.in_channels;
    base.reduction = c.network.reduction;
    base.recalib_bias = c.network.recalib_bias;
    c.network = base.with_recalib(c.network.recalib, c.network.placement);
  }
  if (o.placement || o.recalib) {
    const net::Placement where = o.placement ? net::placement_from_name(*o.placement) : c.network.placement;
    net::Recalib kind = o.recalib ? net::recalib_from_string(*o.recalib) : c.network.recalib;
    if (!o.recalib && kind == net::Recalib::none && where != net::Placement{}) kind = net::Recalib::pe;
    c.network = c.network.with_recalib(kind, where);
  }
  if (o.max_epochs) c.train.max_epochs = *o.max_epochs;
  if (o.seed) c.train.seed = *o.seed;
  if (o.lr0) c.train.lr0 = *o.lr0;
  if (o.eval_every) c.train.eval_every = *o.eval_every;
  if (o.no_augment) {
    c.train.augment.rotate = false;
    c.train.augment.elastic = false;
  }
  c.network.validate();
  c.train.validate();
  c.scene.validate();
  return c;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void echo_config(const ExperimentConfig& c, const std::filesystem::path& dir) {
  Json j = to_json(c);
  write_text(dir / "config.json", canonical_text(j));
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_eval(std::ostream& out, const std::string& prefix, const train::EvalRow& r) {
  out << prefix << "epoch " << r.epoch << " train_loss " << (std::isnan(r.train_loss) ? "-" : fmt(r.train_loss))
      << " val_loss " << fmt(r.val_loss) << " val_dice " << fmt(r.val_mean_dice) << " lr " << r.lr << " t "
      << fmt(r.wall_seconds, 1) << "s" << std::endl;
}

Json dice_json(const std::vector<double>& v) {
  Json a = Json::array();
  for (double d : v) a.push_back(std::isnan(d) ? Json(nullptr) : Json(d));
  return a;
}

int cmd_gen_data(const Overrides& o, std::optional<std::size_t> n, std::ostream& out) {
  const ExperimentConfig c = materialize(o);
  const std::filesystem::path dir = c.dataset.data_dir.empty() ? c.run_dir() / "data" : std::filesystem::path(c.dataset.data_dir);
  const std::size_t count = n.value_or(c.dataset.total());
  const auto samples = data::generate(c.scene, count);
  const auto manifest = data::save_dataset(dir, c.scene, samples);
  out << "wrote " << manifest.files.size() << " samples to " << dir.string() << "\n";
  for (std::size_t i = 0; i < manifest.files.size(); ++i) {
    out << "  " << manifest.files[i] << " crc32 " << hex32(manifest.checksums[i]) << "\n";
  }
  return 0;
}

int cmd_train(const Overrides& o, std::ostream& out) {
  const ExperimentConfig c = materialize(o);
  const auto dir = c.run_dir();
  ensure_dir(dir);
  echo_config(c, dir);
  const auto split = make_split(c);
  auto network = net::Network<float>::build(c.network, c.train.seed);
  const auto breakdown = net::count_parameters(network);
  const std::size_t base_params =
      net::count_parameters(net::Network<float>::build(c.network.with_recalib(net::Recalib::none, {}), 0)).total;
  out << "run " << c.run_name << ": " << breakdown.total << " parameters, " << network.num_recalib_blocks()
      << " recalibration blocks, " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
      << " samples" << std::endl;

  train::FitOptions fo;
  fo.checkpoint_path = dir / "best.rc3k";
  fo.on_eval = [&](const train::EvalRow& r) { print_eval(out, "  ", r); };
  const train::RunRecord rec = train::fit(network, split.train, split.val, c.train, fo);
  {
    std::ofstream csv(dir / "run.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (dir / "run.csv").string());
    train::write_csv(csv, rec);
  }
  Json summary = train::to_json(rec);
  summary["run_name"] = c.run_name;
  summary["version"] = version();
  summary["seed"] = c.train.seed;
  summary["data_seed"] = c.scene.seed;
  summary["spec_hash"] = hex32(net::spec_hash(c.network));
  summary["params"] = breakdown.total;
  summary["recalib_params"] = breakdown.recalib_total;
  summary["delta_params_pct"] = 100.0 * (static_cast<double>(breakdown.total) - static_cast<double>(base_params)) /
                                static_cast<double>(base_params);
  if (!split.test.empty()) {
    const auto weights = loss::median_frequency_weights([&] {
      std::vector<loss::LabelVolume> l;
      for (const auto& s : split.train) l.push_back(s.labels);
      return l;
    }());
    const auto test = train::evaluate(network, split.test, weights, {c.train.lambda_ce, c.train.lambda_dice, 1e-5});
    summary["test_loss"] = test.loss;
    summary["test_mean_dice"] = test.mean_dice;
    summary["test_dice"] = dice_json(test.per_class_dice);
    out << "test mean dice " << fmt(test.mean_dice) << std::endl;
  }
  write_text(dir / "summary.json", canonical_text(summary));
  out << "best epoch " << rec.best_epoch << ", stop: " << rec.stop_reason << ", outputs in " << dir.string() << "\n";
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_ablate(const Overrides& o, const std::string& placements, const std::string& blocks, std::ostream& out) {
  const ExperimentConfig c = materialize(o);
  const auto dir = c.run_dir();
  ensure_dir(dir);
  echo_config(c, dir);
  std::vector<net::Recalib> kinds;
  for (const auto& b : split_list(blocks)) {
    const auto k = net::recalib_from_string(b);
    if (k == net::Recalib::none) throw ConfigError("--blocks takes cse and/or pe");
    kinds.push_back(k);
  }
  const auto names = split_list(placements);
  for (const auto& p : names) {
    if (p != "none") net::placement_from_name(p);
  }
  const auto split = make_split(c);
  train::AblationOptions ao;
  ao.output_dir = dir;
  ao.on_eval = [&](const std::string& name, const train::EvalRow& r) { print_eval(out, "  [" + name + "] ", r); };
  ao.on_row = [&](const train::AblationRow& r) {
    out << r.config << ": test mean dice " << fmt(r.mean_dice) << ", " << r.params << " params ("
        << fmt(r.delta_params_pct, 3) << "%)" << std::endl;
  };
  const auto rows = train::ablation_run(c.network, names, kinds, c.train, split, ao);
  {
    std::ofstream csv(dir / "ablation.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (dir / "ablation.csv").string());
    train::write_csv(csv, rows);
  }
  const std::string table = train::format_table(rows);
  write_text(dir / "ablation.txt", table);
  out << table;
  return 0;
}

int cmd_complexity(const Overrides& o, const std::optional<std::string>& out_dir, std::ostream& out) {
  Overrides oo = o;
  if (!oo.preset && oo.config.empty()) oo.preset = "full";
  const ExperimentConfig c = materialize(oo);
  const auto rows = complexity_report(c.network);
  const std::string table = format_complexity(rows);
  out << table;
  if (out_dir) {
    ensure_dir(*out_dir);
    std::ofstream csv(std::filesystem::path(*out_dir) / "complexity.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write complexity.csv in " + *out_dir);
    write_complexity_csv(csv, rows);
    write_text(std::filesystem::path(*out_dir) / "complexity.txt", table);
  }
  return 0;
}

int cmd_verify(const std::string& level, std::ostream& out) {
  const auto report = verify::run(verify::level_from_string(level));
  out << verify::format_report(report);
  return report.all_passed() ? 0 : 1;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volumetric segmentation with squeeze/projection recalibration blocks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());
  Overrides o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, o);
  std::optional<std::size_t> n;
  gen->add_option("-n,--count", n, "Number of samples (default: n_train + n_val + n_test)");

  auto* tr = app.add_subcommand("train", "Train one network");
  add_common(tr, o);
  add_training(tr, o);
  tr->add_option("--recalib", o.recalib, "Block kind: none, cse or pe");
  tr->add_option("--placement", o.placement, "none or P1..P6 (implies --recalib pe if unset)");

  auto* ab = app.add_subcommand("ablate", "Train every placement/block combination");
  add_common(ab, o);
  add_training(ab, o);
  std::string placements = "none,P1,P2,P3,P4,P5,P6";
  std::string blocks = "pe";
  ab->add_option("--placements", placements, "Comma-separated placements (none, P1..P6)");
  ab->add_option("--blocks", blocks, "Comma-separated block kinds (cse, pe)");

  auto* cx = app.add_subcommand("complexity", "Parameter counts of the architecture variants");
  cx->add_option("-c,--config", o.config, "Experiment config (JSON); its network is the base");
  cx->add_option("--preset", o.preset, "Network ladder: full (default) or desk");
  std::optional<std::string> cx_out;
  cx->add_option("--out", cx_out, "Directory for complexity.csv and complexity.txt");

  auto* vf = app.add_subcommand("verify", "Run the invariant suites");
  std::string level = "fast";
  vf->add_option("--level", level, "fast or full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int code = app.exit(e, out, msg);
    err << msg.str();
    return code == 0 ? 0 : 2;
  }

  try {
    configure_threads();
    if (*gen) return cmd_gen_data(o, n, out);
    if (*tr) return cmd_train(o, out);
    if (*ab) return cmd_ablate(o, placements, blocks, out);
    if (*cx) return cmd_complexity(o, cx_out, out);
    if (*vf) return cmd_verify(level, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> storage{"rc3d"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace rc3d::cli
