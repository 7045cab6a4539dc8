#include "softdiamond/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "softdiamond/analysis.hpp"
#include "softdiamond/error.hpp"
#include "softdiamond/rng.hpp"

namespace softdiamond::train {

using net::Gradients;
using net::Model;
using net::Tensor;

double learning_rate_at(const std::vector<LrKnot>& schedule, double t) {
  if (schedule.empty()) throw InvalidParameter("lr_schedule: no knots");
  if (t <= schedule.front().fraction) return schedule.front().rate;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    const LrKnot& a = schedule[i - 1];
    const LrKnot& b = schedule[i];
    if (t <= b.fraction) {
      const double w = (t - a.fraction) / (b.fraction - a.fraction);
      return a.rate + w * (b.rate - a.rate);
    }
  }
  return schedule.back().rate;
}

void TrainConfig::validate() const {
  if (!(prior_scale_c >= 0.0) || !std::isfinite(prior_scale_c)) throw InvalidParameter("prior_scale_c: must be finite and >= 0");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw InvalidParameter("momentum: must lie in (0, 1]");
  if (!(dampening >= 0.0 && dampening < 1.0)) throw InvalidParameter("dampening: must lie in [0, 1)");
  if (epochs == 0) throw InvalidParameter("epochs: must be >= 1");
  if (batch_size == 0) throw InvalidParameter("batch_size: must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidParameter("dropout_rate: must lie in [0, 1)");
  if (lr_schedule.size() < 2) throw InvalidParameter("lr_schedule: need at least two knots (fractions 0 and 1)");
  if (lr_schedule.front().fraction != 0.0) throw InvalidParameter("lr_schedule: first knot must be at fraction 0");
  if (lr_schedule.back().fraction != 1.0) throw InvalidParameter("lr_schedule: last knot must be at fraction 1");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].rate > 0.0) || !std::isfinite(lr_schedule[i].rate))
      throw InvalidParameter("lr_schedule: rate of knot " + std::to_string(i) + " must be finite and > 0");
    if (i > 0 && !(lr_schedule[i].fraction > lr_schedule[i - 1].fraction))
      throw InvalidParameter("lr_schedule: fractions must be strictly increasing");
  }
  if (augment.cutout && augment.cutout_size == 0) throw InvalidParameter("augment.cutout_size: must be >= 1");
  if (!(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0))
    throw InvalidParameter("augment.flip_probability: must lie in [0, 1]");
}

// ---- prior -------------------------------------------------------------------

PriorGradient PriorGradient::table(prior::DerivTable table) {
  PriorGradient p;
  p.kind_ = Kind::Table;
  p.table_.emplace(std::move(table));
  return p;
}

PriorGradient PriorGradient::laplace(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidParameter("gamma: Laplace scale must be finite and > 0");
  PriorGradient p;
  p.kind_ = Kind::Laplace;
  p.laplace_gamma_ = gamma;
  return p;
}

double PriorGradient::operator()(double theta) const noexcept {
  switch (kind_) {
    case Kind::Table:
      return table_->lookup_grad(theta);
    case Kind::Laplace:
      return theta > 0.0 ? -1.0 / laplace_gamma_ : (theta < 0.0 ? 1.0 / laplace_gamma_ : 0.0);
    case Kind::None:
      break;
  }
  return 0.0;
}

bool PriorGradient::saturates(double theta) const noexcept {
  return kind_ == Kind::Table && table_->saturates(theta);
}

std::string PriorGradient::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::None:
      return "none";
    case Kind::Laplace:
      os << "laplace(gamma=" << laplace_gamma_ << ")";
      return os.str();
    case Kind::Table:
      os << "stable(alpha=" << table_->params().alpha() << ", gamma=" << table_->params().gamma()
         << ", epsilon=" << table_->epsilon() << ", n_grid=" << table_->n_grid() << ")";
      return os.str();
  }
  return "unknown";
}

std::uint32_t PriorGradient::table_checksum() const { return table_ ? table_->checksum() : 0u; }

// ---- optimizer -----------------------------------------------------------------

void MomentumAscent::step(std::vector<Tensor>& params, const Gradients& g, double lr) {
  if (g.size() != params.size()) throw ShapeMismatch("gradient count does not match parameter count");
  if (steps_ == 0) {
    beta_ = g;
    for (std::size_t p = 0; p < params.size(); ++p) {
      double* th = params[p].ptr();
      const double* gp = g[p].ptr();
      for (std::size_t j = 0; j < params[p].size(); ++j) th[j] += lr * gp[j];
    }
  } else {
    const double fresh = 1.0 - tau_;
    for (std::size_t p = 0; p < params.size(); ++p) {
      double* th = params[p].ptr();
      double* b = beta_[p].ptr();
      const double* gp = g[p].ptr();
      for (std::size_t j = 0; j < params[p].size(); ++j) {
        b[j] = m_ * b[j] + fresh * gp[j];
        th[j] += lr * b[j];
      }
    }
  }
  ++steps_;
}

void add_prior_gradient(const Model& model, Gradients& g, const PriorGradient& prior, double c,
                        PriorAccounting* accounting) {
  if (c == 0.0 || !prior.active()) return;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    if (!model.param_info()[p].prior) continue;
    const auto theta = model.params()[p].data();
    double* gp = g[p].ptr();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      gp[j] += c * prior(theta[j]);
      if (accounting) {
        ++accounting->lookups;
        if (prior.saturates(theta[j])) ++accounting->saturated;
      }
    }
  }
}

// ---- evaluation -------------------------------------------------------------------

namespace {

void check_compatible(const Model& model, const data::LabeledDataset& dataset) {
  dataset.validate();
  if (model.input_shape() != dataset.sample_shape())
    throw ShapeMismatch("model input " + net::shape_string(model.input_shape()) + " does not match samples " +
                        net::shape_string(dataset.sample_shape()));
  if (model.layers().empty() || model.layers().back().kind != net::LayerKind::Softmax)
    throw ShapeMismatch("model must end in a Softmax layer");
  if (model.output_shape() != net::Shape{dataset.classes})
    throw ShapeMismatch("model output " + net::shape_string(model.output_shape()) + " does not match K = " +
                        std::to_string(dataset.classes));
}

Tensor gather(const data::LabeledDataset& d, const std::vector<std::size_t>& order, std::size_t begin,
              std::size_t end, std::vector<int>& labels) {
  const std::size_t per = net::shape_size(d.sample_shape());
  net::Shape shape = d.images.shape();
  shape[0] = end - begin;
  std::vector<double> values((end - begin) * per);
  labels.resize(end - begin);
  for (std::size_t r = begin; r < end; ++r) {
    const std::size_t i = order.empty() ? r : order[r];
    std::copy_n(d.images.ptr() + i * per, per, values.data() + (r - begin) * per);
    labels[r - begin] = d.labels[i];
  }
  return Tensor(std::move(shape), std::move(values));
}

/// Correct predictions and summed ln p(y) over a batch of probabilities.
std::pair<std::size_t, double> score(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t k = probs.dim(1);
  std::size_t correct = 0;
  double ll = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = probs.ptr() + i * k;
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    if (pred == static_cast<std::size_t>(labels[i])) ++correct;
    ll += std::log(std::max(row[labels[i]], 1e-300));
  }
  return {correct, ll};
}

}  // namespace

Evaluation evaluate(const Model& model, const data::LabeledDataset& dataset, std::size_t batch_size) {
  check_compatible(model, dataset);
  if (batch_size == 0) throw InvalidParameter("batch_size: must be >= 1");
  std::size_t correct = 0;
  double ll = 0.0;
  std::vector<int> labels;
  for (std::size_t b = 0; b < dataset.size(); b += batch_size) {
    const std::size_t e = std::min(dataset.size(), b + batch_size);
    const Tensor x = gather(dataset, {}, b, e, labels);
    const auto cache = net::forward(model, x, {});
    const auto [c, l] = score(cache.output(), labels);
    correct += c;
    ll += l;
  }
  const double n = static_cast<double>(dataset.size());
  return {static_cast<double>(correct) / n, ll / n};
}

// ---- training ----------------------------------------------------------------------

TrainReport train(Model model, const data::LabeledDataset& dataset, const PriorGradient& prior,
                  const TrainConfig& config, const data::LabeledDataset* test) {
  config.validate();
  check_compatible(model, dataset);
  if (test) check_compatible(model, *test);
  const auto t_start = std::chrono::steady_clock::now();

  const std::size_t n = dataset.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(config.epochs * batches);
  const bool use_prior = config.prior_scale_c != 0.0 && prior.active();

  TrainReport report;
  report.seed = config.seed;
  report.learning_rates.reserve(config.epochs * batches);
  MomentumAscent opt(config.momentum, config.dampening);
  std::vector<std::size_t> order(n);
  std::vector<int> labels;
  std::uint64_t t = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = make_rng(config.seed, "shuffle", epoch);
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle) * static_cast<double>(i));
      std::swap(order[i - 1], order[j]);
    }

    PriorAccounting acct;
    std::size_t correct = 0;
    double ll = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++t) {
      const std::size_t begin = b * config.batch_size, end = std::min(n, begin + config.batch_size);
      Tensor x = gather(dataset, order, begin, end, labels);
      if (config.augment.any()) {
        data::Batch batch{std::move(x), labels, dataset.normalized};
        batch = data::augment(std::move(batch), config.augment, dataset.stats, config.seed, t);
        x = std::move(batch.images);
      }
      net::ForwardOptions fo;
      fo.training = true;
      fo.dropout_rate = config.dropout_rate;
      fo.dropout_seed = derive_seed(config.seed, "dropout", t);
      const auto cache = net::forward(model, x, fo);
      const auto [c, l] = score(cache.output(), labels);
      correct += c;
      ll += l;

      Gradients g = net::backward(model, cache, net::one_hot(labels, dataset.classes));
      model.update_running_stats(cache);
      if (use_prior) add_prior_gradient(model, g, prior, config.prior_scale_c, &acct);

      for (std::size_t p = 0; p < g.size(); ++p) {
        for (std::size_t j = 0; j < g[p].size(); ++j) {
          if (!std::isfinite(g[p][j])) {
            const auto& info = model.param_info()[p];
            std::ostringstream os;
            os << "gradient of layer " << info.layer << " " << info.name << "[" << j << "] = " << g[p][j]
               << " at epoch " << epoch << ", step " << t << " (theta = " << model.params()[p][j] << ")";
            throw NonFiniteGradient(os.str());
          }
        }
      }

      lr = learning_rate_at(config.lr_schedule, static_cast<double>(t) / total_steps);
      report.learning_rates.push_back(lr);
      opt.step(model.params(), g, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    rec.train_log_likelihood = ll / static_cast<double>(n);
    rec.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    rec.test_log_likelihood = std::numeric_limits<double>::quiet_NaN();
    if (test) {
      const Evaluation e = evaluate(model, *test);
      rec.test_accuracy = e.accuracy;
      rec.test_log_likelihood = e.mean_log_likelihood;
    }
    rec.saturated_fraction = acct.lookups ? static_cast<double>(acct.saturated) / static_cast<double>(acct.lookups) : 0.0;
    rec.learning_rate = lr;
    if (rec.saturated_fraction > 0.01) {
      std::ostringstream os;
      os << "TableDomainWarning: epoch " << epoch << ": " << acct.saturated << " of " << acct.lookups
         << " table lookups saturated at the boundary keys; epsilon is too small for the weight range";
      report.warnings.push_back(os.str());
    }
    report.epochs.push_back(rec);
  }

  report.final_model = std::move(model);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

void write_report_csv(const TrainReport& report, std::ostream& out) {
  out << "epoch,train_accuracy,train_log_likelihood,test_accuracy,test_log_likelihood,saturated_fraction,learning_rate\n"
      << std::setprecision(17);
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.train_accuracy << ',' << e.train_log_likelihood << ',' << e.test_accuracy << ','
        << e.test_log_likelihood << ',' << e.saturated_fraction << ',' << e.learning_rate << '\n';
  }
}

// ---- grid ------------------------------------------------------------------------------

namespace {

struct Cell {
  std::string prior;
  double alpha, gamma, c;
  std::uint64_t seed;
  std::size_t table;  // index into the table list, or npos
};

}  // namespace

std::vector<GridRow> run_experiment_grid(const GridSpec& spec, const GridData& data, const ModelFactory& factory) {
  spec.base.validate();
  if (!data.train) throw InvalidParameter("grid: training data is required");
  if (spec.seeds.empty()) throw InvalidParameter("seeds: grid needs at least one seed");
  for (double c : spec.cs)
    if (!(c > 0.0) || !std::isfinite(c)) throw InvalidParameter("cs: prior scales must be finite and > 0");
  if ((!spec.alphas.empty() || spec.include_laplace) && (spec.gammas.empty() || spec.cs.empty()))
    throw InvalidParameter("gammas/cs: prior cells need at least one gamma and one c");

  std::vector<std::optional<prior::DerivTable>> tables;
  std::vector<std::string> table_errors;
  std::vector<Cell> cells;
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  if (spec.include_baseline)
    for (auto s : spec.seeds) cells.push_back({"none", 0.0, 0.0, 0.0, s, npos});
  for (double a : spec.alphas)
    for (double g : spec.gammas) {
      const std::size_t ti = tables.size();
      try {
        tables.emplace_back(prior::DerivTable::build(stable::StableParams::symmetric(a, g), spec.table_epsilon,
                                                     spec.table_grid, spec.quad));
        table_errors.emplace_back();
      } catch (const Error& e) {
        tables.emplace_back();
        table_errors.emplace_back(e.what());
      }
      for (double c : spec.cs)
        for (auto s : spec.seeds) cells.push_back({"stable", a, g, c, s, ti});
    }
  if (spec.include_laplace)
    for (double g : spec.gammas)
      for (double c : spec.cs)
        for (auto s : spec.seeds) cells.push_back({"laplace", 0.0, g, c, s, npos});

  std::vector<GridRow> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& cell = cells[i];
    GridRow& row = rows[i];
    row.prior = cell.prior;
    row.alpha = cell.alpha;
    row.gamma = cell.gamma;
    row.c = cell.c;
    row.seed = cell.seed;
    try {
      PriorGradient prior = PriorGradient::none();
      if (cell.prior == "stable") {
        if (!tables[cell.table]) throw QuadratureFailure(table_errors[cell.table]);
        prior = PriorGradient::table(*tables[cell.table]);
      } else if (cell.prior == "laplace") {
        prior = PriorGradient::laplace(cell.gamma);
      }
      row.table_checksum = prior.table_checksum();
      TrainConfig cfg = spec.base;
      cfg.prior_scale_c = cell.c;
      cfg.seed = cell.seed;
      TrainReport rep = train(factory(cell.seed), *data.train, prior, cfg, nullptr);
      const Model& m = rep.final_model;
      row.train_accuracy = rep.epochs.back().train_accuracy;
      row.validation_accuracy =
          data.validation ? evaluate(m, *data.validation).accuracy : std::numeric_limits<double>::quiet_NaN();
      const data::LabeledDataset& held = data.test ? *data.test : *data.train;
      row.test_accuracy = evaluate(m, held).accuracy;
      const auto sp = analysis::sparsity(m, spec.sparsity_tau);
      row.sparsity = sp.fraction;
      row.kurtosis = sp.kurtosis;
      for (double f : spec.prune_fractions)
        row.pruned_accuracy.push_back(evaluate(analysis::magnitude_prune(m, f).model, held).accuracy);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(spec.threads, cells.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
  }
  return rows;
}

void write_grid_csv(const GridSpec& spec, const std::vector<GridRow>& rows, std::ostream& out) {
  out << "prior,alpha,gamma,c,seed,train_accuracy,validation_accuracy,test_accuracy,sparsity,kurtosis";
  for (double f : spec.prune_fractions) out << ",pruned_accuracy_" << f;
  out << ",table_checksum,error\n" << std::setprecision(17);

  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  for (const auto& r : rows) {
    out << r.prior << ',' << r.alpha << ',' << r.gamma << ',' << r.c << ',' << r.seed << ',' << r.train_accuracy
        << ',' << r.validation_accuracy << ',' << r.test_accuracy << ',' << r.sparsity << ',' << r.kurtosis;
    for (std::size_t k = 0; k < spec.prune_fractions.size(); ++k)
      out << ',' << (k < r.pruned_accuracy.size() ? r.pruned_accuracy[k] : std::numeric_limits<double>::quiet_NaN());
    out << ',' << r.table_checksum << ',' << (r.error.empty() ? "" : quote(r.error)) << '\n';
  }

  // mean rows, in first-appearance order of each cell
  std::vector<std::tuple<std::string, double, double, double>> keys;
  std::map<std::tuple<std::string, double, double, double>, std::vector<const GridRow*>> groups;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.prior, r.alpha, r.gamma, r.c);
    if (!groups.contains(key)) keys.push_back(key);
    if (r.error.empty()) groups[key].push_back(&r);
    else groups[key];
  }
  for (const auto& key : keys) {
    const auto& g = groups[key];
    const double k = static_cast<double>(g.size());
    auto mean = [&](auto field) {
      if (g.empty()) return std::numeric_limits<double>::quiet_NaN();
      double s = 0.0;
      for (const GridRow* r : g) s += field(*r);
      return s / k;
    };
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << std::get<3>(key)
        << ",mean," << mean([](const GridRow& r) { return r.train_accuracy; }) << ','
        << mean([](const GridRow& r) { return r.validation_accuracy; }) << ','
        << mean([](const GridRow& r) { return r.test_accuracy; }) << ','
        << mean([](const GridRow& r) { return r.sparsity; }) << ','
        << mean([](const GridRow& r) { return r.kurtosis; });
    for (std::size_t f = 0; f < spec.prune_fractions.size(); ++f)
      out << ',' << mean([f](const GridRow& r) { return r.pruned_accuracy[f]; });
    out << ",," << '\n';
  }
}

}  // namespace softdiamond::train
