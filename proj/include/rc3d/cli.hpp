#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rc3d/data.hpp"
#include "rc3d/json_util.hpp"
#include "rc3d/net.hpp"
#include "rc3d/train.hpp"

namespace rc3d::cli {

struct DatasetConfig {
  std::size_t n_train = 15;
  std::size_t n_val = 3;
  std::size_t n_test = 12;
  // Load samples from here when set; generate from the scene otherwise.
  std::string data_dir;

  [[nodiscard]] std::size_t total() const { return n_train + n_val + n_test; }
};

// Top-level keys: scene, network, train, dataset, output_dir, run_name.
// network.preset defaults to "desk" here.
struct ExperimentConfig {
  data::SceneSpec scene = data::SceneSpec::default_scene();
  net::NetworkSpec network = net::NetworkSpec::desk();
  train::TrainConfig train;
  DatasetConfig dataset;
  std::string output_dir = "runs";
  std::string run_name = "run";

  [[nodiscard]] std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / run_name; }
};

Json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// First n_train samples train, the next n_val validate, the rest test.
train::DataSplit make_split(const ExperimentConfig& c);

struct ComplexityRow {
  std::string config;
  std::size_t params = 0;
  double delta_pct = 0.0;
};

// baseline, +cse and +pe (at P6), +encoder/decoder, +2 conv layers.
std::vector<ComplexityRow> complexity_report(const net::NetworkSpec& base);
std::string format_complexity(const std::vector<ComplexityRow>& rows);
void write_complexity_csv(std::ostream& os, const std::vector<ComplexityRow>& rows);

// Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rc3d::cli
