#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "softdiamond/data.hpp"
#include "softdiamond/model.hpp"
#include "softdiamond/prior_table.hpp"

namespace softdiamond::train {

/// (fraction of all optimizer steps, learning rate).
struct LrKnot {
  double fraction = 0.0;
  double rate = 0.0;
  bool operator==(const LrKnot&) const = default;
};

/// Piecewise-linear interpolation of the knots at step fraction `t`.
double learning_rate_at(const std::vector<LrKnot>& schedule, double t);

struct TrainConfig {
  double prior_scale_c = 0.0;  // 0 disables the prior
  double momentum = 0.9;       // m in (0, 1]
  double dampening = 0.0;      // tau in [0, 1)
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::vector<LrKnot> lr_schedule{{0.0, 0.05}, {1.0, 0.05}};
  std::uint64_t seed = 0;
  double dropout_rate = 0.0;
  data::AugmentFlags augment;

  /// Throws InvalidParameter naming the offending field.
  void validate() const;
};

/// Source of d/dtheta ln p(theta), the log-prior derivative (without c).
class PriorGradient {
 public:
  enum class Kind { None, Table, Laplace };

  static PriorGradient none() { return PriorGradient(); }
  static PriorGradient table(prior::DerivTable table);
  /// -sgn(theta) / gamma, zero at theta = 0.
  static PriorGradient laplace(double gamma);

  Kind kind() const noexcept { return kind_; }
  bool active() const noexcept { return kind_ != Kind::None; }
  const std::optional<prior::DerivTable>& deriv_table() const noexcept { return table_; }
  double laplace_gamma() const noexcept { return laplace_gamma_; }

  double operator()(double theta) const noexcept;
  bool saturates(double theta) const noexcept;
  std::string describe() const;
  /// CRC-32 of the serialized table, 0 when no table is used.
  std::uint32_t table_checksum() const;

 private:
  PriorGradient() = default;
  Kind kind_ = Kind::None;
  std::optional<prior::DerivTable> table_;
  double laplace_gamma_ = 1.0;
};

/// Momentum update used by train(): the first step moves by lr * g and seeds
/// the buffer with g; later steps set beta <- m beta + (1 - tau) g and move
/// by lr * beta. Ascent orientation.
class MomentumAscent {
 public:
  MomentumAscent(double momentum, double dampening) : m_(momentum), tau_(dampening) {}

  void step(std::vector<net::Tensor>& params, const net::Gradients& g, double lr);
  std::size_t steps() const noexcept { return steps_; }
  const std::vector<net::Tensor>& buffers() const noexcept { return beta_; }

 private:
  double m_, tau_;
  std::size_t steps_ = 0;
  std::vector<net::Tensor> beta_;
};

struct PriorAccounting {
  std::size_t lookups = 0;
  std::size_t saturated = 0;
};

/// Adds c * prior(theta) to the likelihood gradient of every prior-masked
/// parameter. With c = 0 or an inactive prior the gradient is untouched.
void add_prior_gradient(const net::Model& model, net::Gradients& g, const PriorGradient& prior, double c,
                        PriorAccounting* accounting = nullptr);

struct Evaluation {
  double accuracy = 0.0;
  double mean_log_likelihood = 0.0;
};

/// Eval-mode batchnorm, no dropout; argmax of the softmax output.
Evaluation evaluate(const net::Model& model, const data::LabeledDataset& dataset, std::size_t batch_size = 256);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_accuracy = 0.0;
  double train_log_likelihood = 0.0;
  double test_accuracy = 0.0;
  double test_log_likelihood = 0.0;
  double saturated_fraction = 0.0;
  double learning_rate = 0.0;  // rate used by the last step of the epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  net::Model final_model;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> learning_rates;  // realized lambda_t, one per step
  std::vector<std::string> warnings;
};

/// MAP training: mini-batch likelihood gradient plus c times the log-prior
/// derivative, applied by MomentumAscent. `test` may be null; test columns are then NaN.
TrainReport train(net::Model model, const data::LabeledDataset& dataset, const PriorGradient& prior,
                  const TrainConfig& config, const data::LabeledDataset* test = nullptr);

/// Per-epoch CSV of a report.
void write_report_csv(const TrainReport& report, std::ostream& out);

// ---- experiment grid ----------------------------------------------------------

struct GridSpec {
  TrainConfig base;
  std::vector<double> alphas;  // stable priors, one table per (alpha, gamma)
  std::vector<double> gammas;
  std::vector<double> cs;
  std::vector<std::uint64_t> seeds;
  bool include_baseline = true;  // c = 0 rows
  bool include_laplace = false;  // closed-form Laplace rows over gammas x cs
  double table_epsilon = prior::kDefaultEpsilon;
  std::size_t table_grid = prior::kDefaultGridCount;
  stable::QuadratureConfig quad;
  double sparsity_tau = 1e-3;
  std::vector<double> prune_fractions;  // accuracy after pruning, per row
  std::size_t threads = 1;
};

struct GridRow {
  std::string prior;  // "none", "stable", "laplace"
  double alpha = 0.0;
  double gamma = 0.0;
  double c = 0.0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
  double sparsity = 0.0;
  double kurtosis = 0.0;
  std::vector<double> pruned_accuracy;  // one per GridSpec::prune_fractions
  std::uint32_t table_checksum = 0;
  std::string error;  // non-empty when the cell failed
};

struct GridData {
  const data::LabeledDataset* train = nullptr;
  const data::LabeledDataset* validation = nullptr;  // optional
  const data::LabeledDataset* test = nullptr;
};

/// Model factory: untrained model for a given seed.
using ModelFactory = std::function<net::Model(std::uint64_t seed)>;

/// Trains every (prior, alpha, gamma, c, seed) cell. A failing cell records
/// its error and the grid continues. Rows come out in a fixed order whatever
/// the thread count.
std::vector<GridRow> run_experiment_grid(const GridSpec& spec, const GridData& data, const ModelFactory& factory);

/// One row per cell and seed, then one mean row per cell (seed column "mean").
void write_grid_csv(const GridSpec& spec, const std::vector<GridRow>& rows, std::ostream& out);

}  // namespace softdiamond::train
