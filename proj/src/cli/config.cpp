#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rc3d/cli.hpp"

namespace rc3d::cli {

Json to_json(const ExperimentConfig& c) {
  return Json{{"scene", data::to_json(c.scene)},
              {"network", net::to_json(c.network)},
              {"train", train::to_json(c.train)},
              {"dataset",
               {{"n_train", c.dataset.n_train},
                {"n_val", c.dataset.n_val},
                {"n_test", c.dataset.n_test},
                {"data_dir", c.dataset.data_dir}}},
              {"output_dir", c.output_dir},
              {"run_name", c.run_name}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  require_known_keys(j, {"scene", "network", "train", "dataset", "output_dir", "run_name"}, "config");
  ExperimentConfig c;
  if (j.contains("scene")) c.scene = data::scene_spec_from_json(j["scene"]);
  if (j.contains("network")) {
    Json n = j["network"];
    if (n.is_object() && !n.contains("preset")) n["preset"] = "desk";
    c.network = net::network_spec_from_json(n);
  }
  if (j.contains("train")) c.train = train::train_config_from_json(j["train"]);
  if (j.contains("dataset")) {
    const Json& d = j["dataset"];
    require_known_keys(d, {"n_train", "n_val", "n_test", "data_dir"}, "config.dataset");
    read_optional(d, "n_train", c.dataset.n_train, "config.dataset");
    read_optional(d, "n_val", c.dataset.n_val, "config.dataset");
    read_optional(d, "n_test", c.dataset.n_test, "config.dataset");
    read_optional(d, "data_dir", c.dataset.data_dir, "config.dataset");
  }
  read_optional(j, "output_dir", c.output_dir, "config");
  read_optional(j, "run_name", c.run_name, "config");
  if (c.run_name.empty() || c.run_name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("config.run_name must be a non-empty plain name");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_config_from_json(parse_json_text(ss.str(), path.string()));
}

train::DataSplit make_split(const ExperimentConfig& c) {
  if (c.dataset.n_train == 0 || c.dataset.n_val == 0) {
    throw ConfigError("config.dataset: n_train and n_val must be >= 1");
  }
  std::vector<data::VolumeSample> all;
  if (!c.dataset.data_dir.empty()) {
    all = data::load_dataset(c.dataset.data_dir);
    if (all.size() < c.dataset.total()) {
      throw InputError("dataset " + c.dataset.data_dir + " holds " + std::to_string(all.size()) +
                       " samples, config needs " + std::to_string(c.dataset.total()));
    }
  } else {
    all = data::generate(c.scene, c.dataset.total());
  }
  train::DataSplit s;
  for (std::size_t i = 0; i < c.dataset.total(); ++i) {
    auto& dst = i < c.dataset.n_train ? s.train : i < c.dataset.n_train + c.dataset.n_val ? s.val : s.test;
    dst.push_back(std::move(all[i]));
  }
  return s;
}

std::vector<ComplexityRow> complexity_report(const net::NetworkSpec& base) {
  const net::NetworkSpec baseline = base.with_recalib(net::Recalib::none, {});
  auto count = [&](const net::NetworkSpec& s) { return net::count_parameters(net::Network<float>::build(s, 0)).total; };
  const std::size_t b = count(baseline);
  const net::Placement all = net::placement_from_name("P6");
  std::vector<ComplexityRow> rows{
      {"baseline", b, 0.0},
      {"+cse", count(baseline.with_recalib(net::Recalib::cse, all)), 0.0},
      {"+pe", count(baseline.with_recalib(net::Recalib::pe, all)), 0.0},
      {"+encoder/decoder", count(net::variant_extra_encdec(baseline)), 0.0},
      {"+2 conv layers", count(net::variant_extra_conv(baseline)), 0.0},
  };
  for (auto& r : rows) {
    r.delta_pct = 100.0 * (static_cast<double>(r.params) - static_cast<double>(b)) / static_cast<double>(b);
  }
  return rows;
}

std::string format_complexity(const std::vector<ComplexityRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "config" << std::right << std::setw(12) << "params" << std::setw(10) << "delta%"
     << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(18) << r.config << std::right << std::setw(12) << r.params << std::setw(10)
       << std::fixed << std::setprecision(3) << r.delta_pct << "\n";
  }
  return os.str();
}

void write_complexity_csv(std::ostream& os, const std::vector<ComplexityRow>& rows) {
  os << "config,params,delta_pct\n";
  for (const auto& r : rows) os << r.config << "," << r.params << "," << std::setprecision(10) << r.delta_pct << "\n";
}

}  // namespace rc3d::cli
