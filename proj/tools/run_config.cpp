#include "run_config.hpp"

#include <cmath>

#include "softdiamond/error.hpp"

namespace softdiamond::cli {

Json default_config() {
  return Json::parse(R"({
  "prior": {"kind": "stable", "alpha": 1.5, "gamma": 1.0, "mu": 0.0, "beta": 0.0},
  "table": {"epsilon": 0.8, "n_grid": 400, "delta": null, "c": 1.0, "file": null},
  "quadrature": {"abs_tol": 1e-9, "omega_max_cutoff": 1e-12, "max_panels": 1000000},
  "architecture": {"kind": "micro_resnet", "stem_channels": 8, "channels": 8, "output_pool": 2, "hidden": [64]},
  "train": {
    "prior_scale_c": 0.0, "momentum": 0.9, "dampening": 0.0, "epochs": 10, "batch_size": 64,
    "lr_schedule": [[0.0, 0.05], [1.0, 0.005]], "seed": 1, "dropout_rate": 0.0,
    "augment": {"flip": false, "flip_probability": 0.5, "cutout": false, "cutout_size": 8, "channel_norm": false}
  },
  "dataset": {
    "source": "synthetic", "dir": null, "n_train": 5000, "n_validation": 1000, "n_test": 2000,
    "classes": 10, "shape": [3, 8, 8], "difficulty": 2.0, "seed": 7, "max_per_file": 0
  },
  "grid": {
    "alphas": [2.0, 1.5, 1.0, 0.5], "gammas": [1.0], "cs": [0.0001, 0.0003, 0.001], "seeds": [1, 2, 3, 4, 5],
    "include_baseline": true, "include_laplace": false, "prune_fractions": [0.5], "threads": 1
  },
  "analysis": {
    "tau": 0.001, "prune_fractions": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
    "model_file": null, "bandwidth": 0.01, "grid_min": -0.5, "grid_max": 0.5, "grid_points": 1001,
    "kappa": null, "axis_radius": 1.0, "resolution": 360,
    "objective": {"a": [[1.0, 0.0], [0.0, 1.0]], "target": [1.0, 2.5]}
  },
  "density": {"min": -5.0, "max": 5.0, "points": 201},
  "sample": {"n": 1000, "seed": 0},
  "output_dir": null
})");
}

namespace {

bool compatible(const Json& def, const Json& val) {
  if (def.is_null() || val.is_null()) return true;
  if (def.is_number() && val.is_number()) return true;
  return def.type() == val.type();
}

}  // namespace

void merge_config(Json& base, const Json& user, const std::string& path) {
  if (!user.is_object()) throw ValidationError((path.empty() ? "config" : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown key '" + key + "'");
    Json& dst = base[it.key()];
    if (dst.is_object()) {
      merge_config(dst, it.value(), key);
    } else {
      if (!compatible(dst, it.value())) throw ValidationError(key + ": expected " + std::string(dst.type_name()) +
                                                              ", got " + it.value().type_name());
      dst = it.value();
    }
  }
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  // build {"a": {"b": value}} and merge so unknown keys are caught the same way
  Json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    Json wrap = Json::object();
    wrap[part] = std::move(patch);
    patch = std::move(wrap);
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(doc, patch);
}

namespace {

const Json& at(const Json& doc, const std::string& path) {
  return doc.at(Json::json_pointer("/" + [&] {
    std::string p = path;
    for (char& ch : p)
      if (ch == '.') ch = '/';
    return p;
  }()));
}

double number(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (!v.is_number()) throw InvalidParameter(path + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw InvalidParameter(path + ": must be finite");
  return d;
}

std::optional<double> opt_number(const Json& doc, const std::string& path) {
  if (at(doc, path).is_null()) return std::nullopt;
  return number(doc, path);
}

std::uint64_t count(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw InvalidParameter(path + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::uint64_t positive_count(const Json& doc, const std::string& path) {
  const auto n = count(doc, path);
  if (n == 0) throw InvalidParameter(path + ": must be >= 1");
  return n;
}

bool boolean(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (!v.is_boolean()) throw InvalidParameter(path + ": expected true or false");
  return v.get<bool>();
}

std::string text(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (v.is_null()) return {};
  if (!v.is_string()) throw InvalidParameter(path + ": expected a string");
  return v.get<std::string>();
}

std::vector<double> numbers(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (!v.is_array()) throw InvalidParameter(path + ": expected a list of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw InvalidParameter(path + ": expected a list of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::uint64_t> counts(const Json& doc, const std::string& path) {
  const Json& v = at(doc, path);
  if (!v.is_array()) throw InvalidParameter(path + ": expected a list of non-negative integers");
  std::vector<std::uint64_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) throw InvalidParameter(path + ": expected a list of non-negative integers");
    out.push_back(e.get<std::uint64_t>());
  }
  return out;
}

/// Re-throws validation errors from library constructors with the key prefixed.
template <class F>
auto keyed(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw InvalidParameter(path + ": " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::resolve(const Json& doc) {
  RunConfig rc;
  rc.doc = doc;

  rc.prior_kind = text(doc, "prior.kind");
  if (rc.prior_kind != "stable" && rc.prior_kind != "laplace" && rc.prior_kind != "none")
    throw InvalidParameter("prior.kind: expected stable, laplace or none");
  const double alpha = number(doc, "prior.alpha"), beta = number(doc, "prior.beta"),
               gamma = number(doc, "prior.gamma"), mu = number(doc, "prior.mu");
  if (!(alpha > 0.0 && alpha <= 2.0)) throw InvalidParameter("prior.alpha: must lie in (0, 2]");
  if (!(beta >= -1.0 && beta <= 1.0)) throw InvalidParameter("prior.beta: must lie in [-1, 1]");
  if (!(gamma > 0.0)) throw InvalidParameter("prior.gamma: must be > 0");
  rc.prior = stable::StableParams(alpha, beta, gamma, mu);

  rc.table.epsilon = number(doc, "table.epsilon");
  if (!(rc.table.epsilon > 0.0)) throw InvalidParameter("table.epsilon: must be > 0");
  rc.table.n_grid = positive_count(doc, "table.n_grid");
  if (const auto delta = opt_number(doc, "table.delta")) {
    // delta given: derive N_g, which must come out an integer
    if (!(*delta > 0.0)) throw InvalidParameter("table.delta: must be > 0");
    const double n = rc.table.epsilon / *delta;
    const double r = std::round(n);
    if (r < 1.0 || std::abs(n - r) > 1e-9 * r) throw InvalidParameter("table.delta: epsilon / delta must be a positive integer");
    rc.table.n_grid = static_cast<std::size_t>(r);
  }
  rc.table.c = number(doc, "table.c");
  if (!(rc.table.c > 0.0)) throw InvalidParameter("table.c: must be > 0");
  rc.table.file = text(doc, "table.file");

  rc.quad.abs_tol = number(doc, "quadrature.abs_tol");
  rc.quad.omega_max_cutoff = number(doc, "quadrature.omega_max_cutoff");
  rc.quad.max_panels = positive_count(doc, "quadrature.max_panels");
  keyed("quadrature", [&] {
    rc.quad.validate();
    return 0;
  });

  auto& arch = rc.architecture;
  arch.kind = text(doc, "architecture.kind");
  if (arch.kind != "micro_resnet" && arch.kind != "mlp") throw InvalidParameter("architecture.kind: expected micro_resnet or mlp");
  arch.resnet.stem_channels = positive_count(doc, "architecture.stem_channels");
  arch.resnet.channels = positive_count(doc, "architecture.channels");
  arch.resnet.output_pool = count(doc, "architecture.output_pool");
  for (auto h : counts(doc, "architecture.hidden")) {
    if (h == 0) throw InvalidParameter("architecture.hidden: widths must be >= 1");
    arch.hidden.push_back(h);
  }

  auto& t = rc.train;
  t.prior_scale_c = number(doc, "train.prior_scale_c");
  t.momentum = number(doc, "train.momentum");
  t.dampening = number(doc, "train.dampening");
  t.epochs = count(doc, "train.epochs");
  t.batch_size = count(doc, "train.batch_size");
  t.seed = count(doc, "train.seed");
  t.dropout_rate = number(doc, "train.dropout_rate");
  t.lr_schedule.clear();
  const Json& knots = at(doc, "train.lr_schedule");
  if (!knots.is_array()) throw InvalidParameter("train.lr_schedule: expected a list of [fraction, rate] pairs");
  for (const auto& k : knots) {
    if (!k.is_array() || k.size() != 2 || !k[0].is_number() || !k[1].is_number())
      throw InvalidParameter("train.lr_schedule: expected a list of [fraction, rate] pairs");
    t.lr_schedule.push_back({k[0].get<double>(), k[1].get<double>()});
  }
  t.augment.flip = boolean(doc, "train.augment.flip");
  t.augment.flip_probability = number(doc, "train.augment.flip_probability");
  t.augment.cutout = boolean(doc, "train.augment.cutout");
  t.augment.cutout_size = count(doc, "train.augment.cutout_size");
  t.augment.channel_norm = boolean(doc, "train.augment.channel_norm");
  keyed("train", [&] {
    t.validate();
    return 0;
  });

  auto& d = rc.dataset;
  d.source = text(doc, "dataset.source");
  if (d.source != "synthetic" && d.source != "cifar10") throw InvalidParameter("dataset.source: expected synthetic or cifar10");
  d.dir = text(doc, "dataset.dir");
  if (d.source == "cifar10" && d.dir.empty()) throw InvalidParameter("dataset.dir: required for cifar10");
  d.n_train = positive_count(doc, "dataset.n_train");
  d.n_validation = positive_count(doc, "dataset.n_validation");
  d.n_test = positive_count(doc, "dataset.n_test");
  d.classes = positive_count(doc, "dataset.classes");
  d.shape.clear();
  for (auto s : counts(doc, "dataset.shape")) {
    if (s == 0) throw InvalidParameter("dataset.shape: extents must be >= 1");
    d.shape.push_back(s);
  }
  if (d.shape.size() != 3) throw InvalidParameter("dataset.shape: expected [channels, height, width]");
  d.difficulty = number(doc, "dataset.difficulty");
  if (d.difficulty < 0.0) throw InvalidParameter("dataset.difficulty: must be >= 0");
  d.seed = count(doc, "dataset.seed");
  d.max_per_file = count(doc, "dataset.max_per_file");

  auto& g = rc.grid;
  g.base = rc.train;
  g.alphas = numbers(doc, "grid.alphas");
  for (double a : g.alphas)
    if (!(a > 0.0 && a <= 2.0)) throw InvalidParameter("grid.alphas: every alpha must lie in (0, 2]");
  g.gammas = numbers(doc, "grid.gammas");
  for (double v : g.gammas)
    if (!(v > 0.0)) throw InvalidParameter("grid.gammas: every gamma must be > 0");
  g.cs = numbers(doc, "grid.cs");
  for (double v : g.cs)
    if (!(v > 0.0)) throw InvalidParameter("grid.cs: every c must be > 0 (the baseline row covers c = 0)");
  g.seeds = counts(doc, "grid.seeds");
  if (g.seeds.empty()) throw InvalidParameter("grid.seeds: need at least one seed");
  g.include_baseline = boolean(doc, "grid.include_baseline");
  g.include_laplace = boolean(doc, "grid.include_laplace");
  g.prune_fractions = numbers(doc, "grid.prune_fractions");
  for (double f : g.prune_fractions)
    if (!(f >= 0.0 && f < 1.0)) throw InvalidParameter("grid.prune_fractions: fractions must lie in [0, 1)");
  g.threads = positive_count(doc, "grid.threads");
  g.table_epsilon = rc.table.epsilon;
  g.table_grid = rc.table.n_grid;
  g.quad = rc.quad;

  auto& a = rc.analysis;
  a.tau = number(doc, "analysis.tau");
  if (!(a.tau > 0.0)) throw InvalidParameter("analysis.tau: must be > 0");
  g.sparsity_tau = a.tau;
  a.prune_fractions = numbers(doc, "analysis.prune_fractions");
  for (double f : a.prune_fractions)
    if (!(f >= 0.0 && f < 1.0)) throw InvalidParameter("analysis.prune_fractions: fractions must lie in [0, 1)");
  a.model_file = text(doc, "analysis.model_file");
  a.bandwidth = number(doc, "analysis.bandwidth");
  if (!(a.bandwidth > 0.0)) throw InvalidParameter("analysis.bandwidth: must be > 0");
  a.grid_min = number(doc, "analysis.grid_min");
  a.grid_max = number(doc, "analysis.grid_max");
  if (!(a.grid_min < a.grid_max)) throw InvalidParameter("analysis.grid_min: must be below analysis.grid_max");
  a.grid_points = positive_count(doc, "analysis.grid_points");
  a.kappa = opt_number(doc, "analysis.kappa");
  a.axis_radius = number(doc, "analysis.axis_radius");
  if (!(a.axis_radius > 0.0)) throw InvalidParameter("analysis.axis_radius: must be > 0");
  a.resolution = count(doc, "analysis.resolution");
  if (a.resolution < 4) throw InvalidParameter("analysis.resolution: need at least 4 angles");
  const Json& mat = at(doc, "analysis.objective.a");
  if (!mat.is_array() || mat.size() != 2 || !mat[0].is_array() || !mat[1].is_array() || mat[0].size() != 2 ||
      mat[1].size() != 2)
    throw InvalidParameter("analysis.objective.a: expected a 2x2 matrix");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      if (!mat[i][j].is_number()) throw InvalidParameter("analysis.objective.a: expected a 2x2 matrix");
      a.objective.a[i * 2 + j] = mat[i][j].get<double>();
    }
  const auto target = numbers(doc, "analysis.objective.target");
  if (target.size() != 2) throw InvalidParameter("analysis.objective.target: expected two numbers");
  a.objective.target = {target[0], target[1]};
  keyed("analysis.objective", [&] {
    a.objective.validate();
    return 0;
  });

  rc.density_min = number(doc, "density.min");
  rc.density_max = number(doc, "density.max");
  if (!(rc.density_min <= rc.density_max)) throw InvalidParameter("density.min: must not exceed density.max");
  rc.density_points = positive_count(doc, "density.points");
  rc.sample_n = positive_count(doc, "sample.n");
  rc.sample_seed = count(doc, "sample.seed");
  rc.output_dir = text(doc, "output_dir");
  return rc;
}

net::Model build_model(const ArchitectureSettings& arch, const net::Shape& input, std::size_t classes,
                       std::uint64_t seed) {
  net::Model m = [&] {
    if (arch.kind == "mlp") return net::mlp(input, arch.hidden, classes);
    net::MicroResNetConfig c = arch.resnet;
    c.input = input;
    c.classes = classes;
    return net::micro_resnet(c);
  }();
  return net::init_xavier_uniform(std::move(m), derive_seed(seed, "init"));
}

}  // namespace softdiamond::cli
