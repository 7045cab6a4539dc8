// softdiamond: command-line front end.
//
//   softdiamond density  --alpha 1 --gamma 1 --min -5 --max 5 --points 11
//   softdiamond sample   --alpha 0.7 --n 1000 --seed 3
//   softdiamond table build --alpha 1.5 --out prior.sdt
//   softdiamond table inspect prior.sdt --values
//   softdiamond train    --config run.json --out-dir out/
//   softdiamond grid | prune | geometry | kde ...
//
// Every command accepts --config FILE (JSON), --set key.path=value and
// --out-dir DIR. Flags override the file. Without --out-dir the CSV goes to
// stdout; with it, CSVs and manifest.json are written there.
// Exit codes: 0 success, 1 invalid input, 2 runtime or numeric failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "run_config.hpp"
#include "softdiamond/analysis.hpp"
#include "softdiamond/binary_io.hpp"
#include "softdiamond/error.hpp"
#include "softdiamond/prior_table.hpp"
#include "softdiamond/stable_density.hpp"
#include "softdiamond/trainer.hpp"
#include "softdiamond/version.hpp"

namespace fs = std::filesystem;
using namespace softdiamond;
using cli::Json;
using cli::RunConfig;

namespace {

struct Flag {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::vector<Flag> flags;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_file, "JSON run configuration");
  sub->add_option("--set", args.overrides, "Override a config key: key.path=value (repeatable)");
  sub->add_option("--out-dir", args.out_dir, "Write CSVs and manifest.json into this directory");
}

/// Options are registered after the vector stops growing so the bound
/// strings keep stable addresses.
void bind_flags(CLI::App* sub, CommonArgs& args, const std::vector<std::pair<std::string, std::string>>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) args.flags.push_back({names[i].second, {}, nullptr});
  for (std::size_t i = 0; i < names.size(); ++i)
    args.flags[i].option = sub->add_option(names[i].first, args.flags[i].value, "Sets " + names[i].second);
}

RunConfig load_config(const CommonArgs& args) {
  Json doc = cli::default_config();
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    if (!in) throw ValidationError("config: cannot open '" + args.config_file + "'");
    Json user;
    try {
      user = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ValidationError("config: '" + args.config_file + "' is not valid JSON: " + e.what());
    }
    cli::merge_config(doc, user);
  }
  for (const auto& o : args.overrides) cli::apply_override(doc, o);
  for (const auto& f : args.flags)
    if (f.option && f.option->count() > 0) cli::apply_override(doc, f.key + "=" + f.value);
  if (!args.out_dir.empty()) doc["output_dir"] = args.out_dir;
  return RunConfig::resolve(doc);
}

/// Collects outputs, then writes them to stdout or to the output directory
/// together with a manifest.
class Emitter {
 public:
  Emitter(const RunConfig& rc, std::string command) : rc_(rc), command_(std::move(command)) {}

  void csv(const std::string& name, const std::string& content) { files_.emplace_back(name, content); }
  void binary(const std::string& name, io::Bytes bytes) { blobs_.emplace_back(name, std::move(bytes)); }
  void table_checksum(std::optional<std::uint32_t> crc) { crc_ = crc; }
  void note(const std::string& key, Json value) { extra_[key] = std::move(value); }
  void warn(const std::string& w) {
    std::cerr << w << '\n';
    warnings_.push_back(w);
  }

  void finish() {
    if (rc_.output_dir.empty()) {
      for (const auto& [name, content] : files_) std::cout << content;
      return;
    }
    fs::create_directories(rc_.output_dir);
    Json manifest;
    manifest["command"] = command_;
    manifest["version"] = version_string();
    manifest["table_checksum"] = crc_ ? Json(*crc_) : Json(nullptr);
    if (crc_) {
      std::ostringstream hex;
      hex << std::hex << std::setw(8) << std::setfill('0') << *crc_;
      manifest["table_checksum_hex"] = hex.str();
    }
    manifest["outputs"] = Json::array();
    for (const auto& [name, content] : files_) {
      std::ofstream(fs::path(rc_.output_dir) / name, std::ios::binary) << content;
      manifest["outputs"].push_back(name);
    }
    for (const auto& [name, bytes] : blobs_) {
      io::write_file((fs::path(rc_.output_dir) / name).string(), bytes);
      manifest["outputs"].push_back(name);
    }
    manifest["warnings"] = warnings_;
    for (auto it = extra_.begin(); it != extra_.end(); ++it) manifest[it.key()] = it.value();
    manifest["config"] = rc_.doc;
    std::ofstream(fs::path(rc_.output_dir) / "manifest.json") << manifest.dump(2) << '\n';
  }

 private:
  const RunConfig& rc_;
  std::string command_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<std::pair<std::string, io::Bytes>> blobs_;
  std::optional<std::uint32_t> crc_;
  std::vector<std::string> warnings_;
  Json extra_ = Json::object();
};

// ---- commands ------------------------------------------------------------------

void cmd_density(const RunConfig& rc) {
  Emitter em(rc, "density");
  std::ostringstream os;
  os << "theta,density\n" << std::setprecision(17);
  for (double th : analysis::linear_grid(rc.density_min, rc.density_max, rc.density_points))
    os << th << ',' << stable::pdf(rc.prior, th, rc.quad) << '\n';
  em.csv("density.csv", os.str());
  em.finish();
}

void cmd_sample(const RunConfig& rc) {
  Emitter em(rc, "sample");
  std::ostringstream os;
  os << "index,x\n" << std::setprecision(17);
  const auto xs = stable::sample(rc.prior, rc.sample_n, rc.sample_seed);
  for (std::size_t i = 0; i < xs.size(); ++i) os << i << ',' << xs[i] << '\n';
  em.csv("sample.csv", os.str());
  em.finish();
}

std::string describe_table(const prior::DerivTable& t, bool values) {
  std::ostringstream os;
  os << std::setprecision(17);
  if (values) {
    os << "key,theta,value\n";
    for (std::int64_t k = -t.n_grid(); k <= t.n_grid(); ++k) os << k << ',' << t.grid_point(k) << ',' << t.value_at(k) << '\n';
    return os.str();
  }
  os << "field,value\n"
     << "version," << prior::kTableFormatVersion << '\n'
     << "alpha," << t.params().alpha() << '\n'
     << "gamma," << t.params().gamma() << '\n'
     << "mu," << t.params().mu() << '\n'
     << "epsilon," << t.epsilon() << '\n'
     << "n_grid," << t.n_grid() << '\n'
     << "delta," << t.delta() << '\n'
     << "c," << t.prior_scale_c() << '\n'
     << "value_at_0," << t.value_at(0) << '\n'
     << "checksum," << t.checksum() << '\n';
  return os.str();
}

prior::DerivTable build_table(const RunConfig& rc) {
  if (rc.prior.beta() != 0.0) throw NonSymmetric("prior.beta: tables need a symmetric prior (beta = 0)");
  return prior::DerivTable::build(rc.prior, rc.table.epsilon, rc.table.n_grid, rc.quad, rc.table.c);
}

void cmd_table_build(const RunConfig& rc, const std::string& out_file, bool values) {
  Emitter em(rc, "table build");
  const auto t = build_table(rc);
  io::write_file(out_file, t.serialize());
  em.table_checksum(t.checksum());
  em.note("table_file", out_file);
  em.csv("table.csv", describe_table(t, values));
  em.finish();
}

void cmd_table_inspect(const RunConfig& rc, const std::string& file, bool values) {
  Emitter em(rc, "table inspect");
  const auto t = prior::DerivTable::deserialize(io::read_file(file));
  em.table_checksum(t.checksum());
  em.note("table_file", file);
  em.csv("table.csv", describe_table(t, values));
  em.finish();
}

struct Splits {
  data::LabeledDataset train, validation, test;
  bool has_validation = false;
};

Splits load_data(const RunConfig& rc) {
  const auto& d = rc.dataset;
  if (d.source == "cifar10") {
    auto tt = data::load_cifar10(d.dir, d.max_per_file);
    Splits s;
    std::vector<std::size_t> tr(std::min(d.n_train, tt.train.size())), te(std::min(d.n_test, tt.test.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    for (std::size_t i = 0; i < te.size(); ++i) te[i] = i;
    s.train = tt.train.subset(tr);
    s.test = tt.test.subset(te);
    return s;
  }
  auto sp = data::make_synthetic_splits(d.n_train, d.n_validation, d.n_test, d.classes, d.shape, d.difficulty, d.seed);
  return {std::move(sp.train), std::move(sp.validation), std::move(sp.test), true};
}

train::PriorGradient make_prior(const RunConfig& rc) {
  if (rc.prior_kind == "none") return train::PriorGradient::none();
  if (rc.prior_kind == "laplace") return train::PriorGradient::laplace(rc.prior.gamma());
  if (!rc.table.file.empty()) return train::PriorGradient::table(prior::DerivTable::deserialize(io::read_file(rc.table.file)));
  return train::PriorGradient::table(build_table(rc));
}

void cmd_train(const RunConfig& rc) {
  Emitter em(rc, "train");
  const Splits s = load_data(rc);
  const auto prior = make_prior(rc);
  const bool uses_table = prior.kind() == train::PriorGradient::Kind::Table && rc.train.prior_scale_c != 0.0;
  em.table_checksum(uses_table ? std::optional(prior.table_checksum()) : std::nullopt);
  const auto model = cli::build_model(rc.architecture, s.train.sample_shape(), s.train.classes, rc.train.seed);
  const auto rep = train::train(model, s.train, prior, rc.train, &s.test);
  for (const auto& w : rep.warnings) em.warn(w);
  std::cerr << "trained " << rc.train.epochs << " epochs in " << rep.wall_seconds << " s\n";

  std::ostringstream report, sp;
  train::write_report_csv(rep, report);
  analysis::write_sparsity_csv(analysis::sparsity(rep.final_model, rc.analysis.tau), sp);
  em.csv("train.csv", report.str());
  em.csv("sparsity.csv", sp.str());
  em.binary("model.sdm", rep.final_model.serialize());
  em.note("prior", prior.describe());
  em.note("seed", rc.train.seed);
  em.finish();
}

void cmd_grid(const RunConfig& rc) {
  Emitter em(rc, "grid");
  const Splits s = load_data(rc);
  const auto factory = [&](std::uint64_t seed) {
    return cli::build_model(rc.architecture, s.train.sample_shape(), s.train.classes, seed);
  };
  const auto rows = train::run_experiment_grid(
      rc.grid, {&s.train, s.has_validation ? &s.validation : nullptr, &s.test}, factory);
  Json checksums = Json::array();
  for (const auto& r : rows) {
    if (!r.error.empty()) em.warn("cell " + r.prior + " alpha=" + std::to_string(r.alpha) + " gamma=" +
                                  std::to_string(r.gamma) + " c=" + std::to_string(r.c) + " seed=" +
                                  std::to_string(r.seed) + " failed: " + r.error);
    if (r.table_checksum != 0 && (checksums.empty() || checksums.back() != r.table_checksum))
      checksums.push_back(r.table_checksum);
  }
  std::ostringstream os;
  train::write_grid_csv(rc.grid, rows, os);
  em.csv("grid.csv", os.str());
  em.note("table_checksums", checksums);
  em.finish();
}

net::Model load_model(const RunConfig& rc) {
  if (rc.analysis.model_file.empty()) throw InvalidParameter("analysis.model_file: a trained model file is required");
  return net::Model::deserialize(io::read_file(rc.analysis.model_file));
}

void cmd_prune(const RunConfig& rc) {
  Emitter em(rc, "prune");
  const auto model = load_model(rc);
  const Splits s = load_data(rc);
  const auto points = analysis::prune_sweep(model, rc.analysis.prune_fractions,
                                            [&](const net::Model& m) { return train::evaluate(m, s.test).accuracy; });
  std::ostringstream os;
  analysis::write_prune_csv(points, os);
  em.csv("prune.csv", os.str());
  em.finish();
}

void cmd_kde(const RunConfig& rc) {
  Emitter em(rc, "kde");
  const auto model = load_model(rc);
  const auto grid = analysis::linear_grid(rc.analysis.grid_min, rc.analysis.grid_max, rc.analysis.grid_points);
  const auto curve = analysis::weight_kde(model, rc.analysis.bandwidth, grid);
  std::ostringstream os, sp;
  analysis::write_kde_csv(curve, os);
  analysis::write_sparsity_csv(analysis::sparsity(model, rc.analysis.tau), sp);
  em.csv("kde.csv", os.str());
  if (!rc.output_dir.empty()) em.csv("sparsity.csv", sp.str());
  em.note("kde_mass", curve.mass());
  em.finish();
}

void cmd_geometry(const RunConfig& rc, bool toy) {
  Emitter em(rc, "geometry");
  if (rc.prior.beta() != 0.0) throw NonSymmetric("prior.beta: geometry needs a symmetric prior (beta = 0)");
  const double kappa = rc.analysis.kappa ? *rc.analysis.kappa
                                         : analysis::kappa_for_axis_radius(rc.prior, rc.analysis.axis_radius, rc.quad);
  const auto contour = analysis::constraint_contour(rc.prior, kappa, rc.analysis.resolution, rc.quad);
  std::ostringstream os;
  analysis::write_contour_csv(contour, os);
  em.csv("contour.csv", os.str());
  if (toy) {
    const auto sol = analysis::toy_lse_solve(rc.analysis.objective, rc.prior, kappa, rc.quad);
    std::ostringstream ts;
    ts << "alpha,gamma,kappa,theta1,theta2,objective,on_boundary\n" << std::setprecision(17);
    ts << rc.prior.alpha() << ',' << rc.prior.gamma() << ',' << kappa << ',' << sol.theta1 << ',' << sol.theta2 << ','
       << sol.objective << ',' << (sol.on_boundary ? 1 : 0) << '\n';
    em.csv("toy.csv", ts.str());
  }
  em.note("kappa", kappa);
  em.note("radial_deviation", contour.max_radial_deviation());
  em.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softdiamond: stable-prior Bayesian backpropagation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  const std::vector<std::pair<std::string, std::string>> prior_flags{
      {"--alpha", "prior.alpha"}, {"--gamma", "prior.gamma"}, {"--mu", "prior.mu"}, {"--beta", "prior.beta"}};
  auto with = [&](std::vector<std::pair<std::string, std::string>> extra) {
    auto v = prior_flags;
    v.insert(v.end(), extra.begin(), extra.end());
    return v;
  };

  CommonArgs density_a, sample_a, build_a, inspect_a, train_a, grid_a, prune_a, geometry_a, kde_a;
  auto* density = app.add_subcommand("density", "Density curve h(theta) as CSV");
  add_common(density, density_a);
  bind_flags(density, density_a, with({{"--min", "density.min"}, {"--max", "density.max"}, {"--points", "density.points"},
                                       {"--abs-tol", "quadrature.abs_tol"}}));

  auto* sample = app.add_subcommand("sample", "Stable draws as CSV");
  add_common(sample, sample_a);
  bind_flags(sample, sample_a, with({{"--n", "sample.n"}, {"--seed", "sample.seed"}}));

  auto* table = app.add_subcommand("table", "Build or inspect log-prior derivative tables");
  table->require_subcommand(1);
  std::string table_out, table_in;
  bool table_values = false;
  auto* build = table->add_subcommand("build", "Build a table file");
  add_common(build, build_a);
  bind_flags(build, build_a, with({{"--epsilon", "table.epsilon"}, {"--n-grid", "table.n_grid"}, {"--delta", "table.delta"},
                                   {"--c", "table.c"}, {"--abs-tol", "quadrature.abs_tol"}}));
  build->add_option("--out", table_out, "Table file to write")->required();
  build->add_flag("--values", table_values, "Dump every table value instead of the summary");
  auto* inspect = table->add_subcommand("inspect", "Verify and describe a table file");
  add_common(inspect, inspect_a);
  inspect->add_option("file", table_in, "Table file")->required();
  inspect->add_flag("--values", table_values, "Dump every table value instead of the summary");

  auto* trainc = app.add_subcommand("train", "Train one model");
  add_common(trainc, train_a);
  bind_flags(trainc, train_a, with({{"--prior", "prior.kind"}, {"--c", "train.prior_scale_c"}, {"--epochs", "train.epochs"},
                                    {"--seed", "train.seed"}, {"--batch-size", "train.batch_size"},
                                    {"--table", "table.file"}}));

  auto* grid = app.add_subcommand("grid", "Run an experiment grid");
  add_common(grid, grid_a);
  bind_flags(grid, grid_a, {{"--epochs", "train.epochs"}, {"--threads", "grid.threads"}});

  auto* prune = app.add_subcommand("prune", "Accuracy after magnitude pruning");
  add_common(prune, prune_a);
  bind_flags(prune, prune_a, {{"--model", "analysis.model_file"}});

  bool toy = false;
  auto* geometry = app.add_subcommand("geometry", "Constraint-set contour (and toy least-squares solution)");
  add_common(geometry, geometry_a);
  bind_flags(geometry, geometry_a, with({{"--kappa", "analysis.kappa"}, {"--axis-radius", "analysis.axis_radius"},
                                         {"--resolution", "analysis.resolution"}}));
  geometry->add_flag("--toy", toy, "Also solve the 2-D least-squares problem");

  auto* kde = app.add_subcommand("kde", "Kernel density estimate of trained weights");
  add_common(kde, kde_a);
  bind_flags(kde, kde_a, {{"--model", "analysis.model_file"}, {"--bandwidth", "analysis.bandwidth"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (density->parsed()) cmd_density(load_config(density_a));
    else if (sample->parsed()) cmd_sample(load_config(sample_a));
    else if (build->parsed()) cmd_table_build(load_config(build_a), table_out, table_values);
    else if (inspect->parsed()) cmd_table_inspect(load_config(inspect_a), table_in, table_values);
    else if (trainc->parsed()) cmd_train(load_config(train_a));
    else if (grid->parsed()) cmd_grid(load_config(grid_a));
    else if (prune->parsed()) cmd_prune(load_config(prune_a));
    else if (geometry->parsed()) cmd_geometry(load_config(geometry_a), toy);
    else if (kde->parsed()) cmd_kde(load_config(kde_a));
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
