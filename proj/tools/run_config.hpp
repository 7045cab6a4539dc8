#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "softdiamond/analysis.hpp"
#include "softdiamond/data.hpp"
#include "softdiamond/model.hpp"
#include "softdiamond/stable_density.hpp"
#include "softdiamond/trainer.hpp"

namespace softdiamond::cli {

using Json = nlohmann::ordered_json;

/// Every recognised key with its default value. A null default marks an
/// optional setting.
Json default_config();

/// Overlays `user` on `base`. Keys absent from `base` are rejected with
/// ValidationError naming the dotted path.
void merge_config(Json& base, const Json& user, const std::string& path = "");

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(Json& doc, const std::string& assignment);

struct TableSettings {
  double epsilon = prior::kDefaultEpsilon;
  std::size_t n_grid = prior::kDefaultGridCount;
  double c = 1.0;
  std::string file;  // use a prebuilt table when set
};

struct ArchitectureSettings {
  std::string kind = "micro_resnet";
  net::MicroResNetConfig resnet;
  std::vector<std::size_t> hidden;  // mlp
};

struct DatasetSettings {
  std::string source = "synthetic";
  std::string dir;
  std::size_t n_train = 5000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 2000;
  std::size_t classes = 10;
  net::Shape shape{3, 8, 8};
  double difficulty = 2.0;
  std::uint64_t seed = 7;
  std::size_t max_per_file = 0;
};

struct AnalysisSettings {
  double tau = 1e-3;
  std::vector<double> prune_fractions;
  std::string model_file;
  double bandwidth = 0.01;
  double grid_min = -0.5;
  double grid_max = 0.5;
  std::size_t grid_points = 1001;
  std::optional<double> kappa;
  double axis_radius = 1.0;
  std::size_t resolution = 360;
  analysis::QuadraticObjective objective;
};

/// Typed, fully validated view of a config document.
struct RunConfig {
  Json doc;
  std::string prior_kind = "stable";
  stable::StableParams prior = stable::StableParams::symmetric(1.5, 1.0);
  TableSettings table;
  stable::QuadratureConfig quad;
  ArchitectureSettings architecture;
  train::TrainConfig train;
  DatasetSettings dataset;
  train::GridSpec grid;
  AnalysisSettings analysis;
  double density_min = -5.0;
  double density_max = 5.0;
  std::size_t density_points = 201;
  std::size_t sample_n = 1000;
  std::uint64_t sample_seed = 0;
  std::string output_dir;

  /// Reads and validates every section; errors name the offending key.
  static RunConfig resolve(const Json& doc);
};

/// Untrained model of the configured architecture for `input`/`classes`.
net::Model build_model(const ArchitectureSettings& arch, const net::Shape& input, std::size_t classes,
                       std::uint64_t seed);

}  // namespace softdiamond::cli
