#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "softdiamond/error.hpp"
#include "softdiamond/trainer.hpp"

using namespace softdiamond;
using namespace softdiamond::train;
using data::LabeledDataset;
using net::Model;
using net::Tensor;
using prior::DerivTable;
using stable::StableParams;

namespace {

// Flatten -> Dense(2) -> Softmax fed with all-zero images: the likelihood
// gradient of the dense weights is exactly zero, so the weights move under
// the prior term alone.
struct ZeroInputProblem {
  Model model;
  LabeledDataset data;
};

ZeroInputProblem zero_input_problem(std::size_t n, std::vector<double> weights) {
  ZeroInputProblem p;
  p.model = net::ModelBuilder({1, 1, 1}).add(net::LayerSpec::flatten()).add(net::LayerSpec::dense(2)).add(net::LayerSpec::softmax()).build();
  p.model.params()[0] = Tensor({2, 1}, std::move(weights));
  p.data.images = Tensor({n, 1, 1, 1}, 0.0);
  p.data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.data.labels[i] = static_cast<int>(i % 2);
  p.data.classes = 2;
  p.data.normalized = true;
  return p;
}

const DerivTable& cauchy_table() {
  static const DerivTable t = DerivTable::build(StableParams::symmetric(1.0, 1.0), 2.0, 1000);
  return t;
}

const data::SyntheticSplits& small_data() {
  static const auto d = data::make_synthetic_splits(120, 40, 60, 3, {2, 4, 4}, 1.0, 5);
  return d;
}

Model small_mlp(std::uint64_t seed) {
  return net::init_xavier_uniform(net::mlp({2, 4, 4}, {8}, 3), seed);
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.lr_schedule = {{0.0, 0.1}, {0.5, 0.05}, {1.0, 0.01}};
  c.seed = 9;
  return c;
}

}  // namespace

TEST(Schedule, InterpolatesKnotsExactly) {
  const std::vector<LrKnot> s{{0.0, 0.1}, {0.25, 0.5}, {1.0, 0.2}};
  EXPECT_EQ(learning_rate_at(s, 0.0), 0.1);
  EXPECT_EQ(learning_rate_at(s, 0.25), 0.5);
  EXPECT_EQ(learning_rate_at(s, 1.0), 0.2);
  EXPECT_EQ(learning_rate_at(s, 0.125), 0.1 + 0.5 * (0.5 - 0.1));
  EXPECT_EQ(learning_rate_at(s, 0.625), 0.5 + 0.5 * (0.2 - 0.5));
  EXPECT_EQ(learning_rate_at(s, 2.0), 0.2);
}

TEST(Schedule, RealizedRatesFollowStepFraction) {
  const auto& d = small_data();
  TrainConfig cfg = small_config();
  const auto rep = train::train(small_mlp(1), d.train, PriorGradient::none(), cfg);
  const std::size_t steps = cfg.epochs * ((d.train.size() + cfg.batch_size - 1) / cfg.batch_size);
  ASSERT_EQ(rep.learning_rates.size(), steps);
  for (std::size_t t = 0; t < steps; ++t)
    EXPECT_EQ(rep.learning_rates[t], learning_rate_at(cfg.lr_schedule, static_cast<double>(t) / static_cast<double>(steps)));
  EXPECT_EQ(rep.learning_rates.front(), 0.1);
  EXPECT_EQ(rep.epochs.size(), cfg.epochs);
}

TEST(TrainConfigValidation, RejectsBadFields) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_THROW(bad([](TrainConfig& c) { c.prior_scale_c = -1; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.momentum = 0; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.momentum = 1.5; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.dampening = 1; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.epochs = 0; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr_schedule = {{0.1, 0.1}, {1, 0.1}}; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr_schedule = {{0, 0.1}, {0.9, 0.1}}; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr_schedule = {{0, 0.1}, {0.5, 0.1}, {0.5, 0.1}, {1, 0.1}}; }).validate(),
               InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr_schedule = {{0, 0.1}, {1, 0.0}}; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](TrainConfig& c) { c.dropout_rate = 1.0; }).validate(), InvalidParameter);
}

TEST(MomentumAscent, MatchesHandUnrolledRecursion) {
  const double m = 0.9, tau = 0.2;
  MomentumAscent opt(m, tau);
  std::vector<Tensor> params{Tensor({1}, 0.3)};
  double theta = 0.3, beta = 0.0;
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const double g = 2.0 * uniform01(rng) - 1.0;
    const double lr = 0.1 / (1.0 + t);
    opt.step(params, {Tensor({1}, g)}, lr);
    if (t == 0) {
      theta = theta + lr * g;
      beta = g;
    } else {
      beta = m * beta + (1.0 - tau) * g;
      theta = theta + lr * beta;
    }
    ASSERT_EQ(params[0][0], theta) << "step " << t;
    ASSERT_EQ(opt.buffers()[0][0], beta) << "step " << t;
  }
  EXPECT_EQ(opt.steps(), 10u);
}

TEST(MomentumAscent, HeavyBallGrowsLinearly) {
  MomentumAscent opt(1.0, 0.0);
  std::vector<Tensor> params{Tensor({1}, 0.0)};
  for (int t = 0; t < 8; ++t) {
    opt.step(params, {Tensor({1}, 0.5)}, 1.0);
    EXPECT_EQ(opt.buffers()[0][0], 0.5 * (t + 1));
  }
  // theta = sum of 0.5 k for k = 1..8
  EXPECT_EQ(params[0][0], 0.5 * 36.0);
}

TEST(MapTraining, TrainerTrajectoryMatchesHandUnroll) {
  auto p = zero_input_problem(5, {0.5, -0.3});
  TrainConfig cfg;
  cfg.prior_scale_c = 0.5;
  cfg.momentum = 0.9;
  cfg.dampening = 0.1;
  cfg.epochs = 2;
  cfg.batch_size = 1;
  cfg.lr_schedule = {{0.0, 0.2}, {1.0, 0.02}};
  const auto prior = PriorGradient::table(cauchy_table());
  const auto rep = train::train(p.model, p.data, prior, cfg);

  double theta[2] = {0.5, -0.3}, beta[2] = {0, 0};
  for (int t = 0; t < 10; ++t) {
    const double lr = learning_rate_at(cfg.lr_schedule, t / 10.0);
    EXPECT_EQ(rep.learning_rates[t], lr);
    for (int j = 0; j < 2; ++j) {
      const double g = cfg.prior_scale_c * cauchy_table().lookup_grad(theta[j]);
      if (t == 0) {
        theta[j] += lr * g;
        beta[j] = g;
      } else {
        beta[j] = cfg.momentum * beta[j] + (1.0 - cfg.dampening) * g;
        theta[j] += lr * beta[j];
      }
    }
  }
  EXPECT_EQ(rep.final_model.params()[0][0], theta[0]);
  EXPECT_EQ(rep.final_model.params()[0][1], theta[1]);
}

TEST(MapTraining, FirstCauchyStepFromHalf) {
  auto p = zero_input_problem(1, {0.5, 0.0});
  TrainConfig cfg;
  cfg.prior_scale_c = 1.0;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.lr_schedule = {{0.0, 0.1}, {1.0, 0.1}};
  const auto rep = train::train(p.model, p.data, PriorGradient::table(DerivTable::build(StableParams::symmetric(1.0, 1.0), 0.8, 400)), cfg);
  EXPECT_NEAR(rep.final_model.params()[0][0], 0.42, 1e-6);
  EXPECT_EQ(rep.final_model.params()[0][1], 0.0);
}

TEST(MapTraining, PriorPullsWeightsTowardZero) {
  Rng rng(77);
  for (int trial = 0; trial < 12; ++trial) {
    const double alpha = 0.5 + 1.5 * uniform01(rng);
    const double gamma = 0.3 + 1.7 * uniform01(rng);
    const double c = std::pow(10.0, -3.0 + 3.0 * uniform01(rng));
    const auto table = DerivTable::build(StableParams::symmetric(alpha, gamma), 0.8, 400);
    const double w0 = 0.7 * uniform01(rng) + 0.01, w1 = -(0.7 * uniform01(rng) + 0.01);
    auto p = zero_input_problem(4, {w0, w1});
    const auto prior = PriorGradient::table(table);
    MomentumAscent opt(0.9, 0.0);
    Model& m = p.model;
    bool live[2] = {true, true};
    const double sign0[2] = {1.0, -1.0};
    for (int t = 0; t < 40; ++t) {
      net::Gradients g{Tensor({2, 1}, 0.0), Tensor({2}, 0.0)};
      add_prior_gradient(m, g, prior, c);
      const double before[2] = {m.params()[0][0], m.params()[0][1]};
      opt.step(m.params(), g, 0.05);
      for (int j = 0; j < 2; ++j) {
        // the pull holds while the weight stays on its side and outside the zero cell
        if (!live[j]) continue;
        const double delta = m.params()[0][j] - before[j];
        EXPECT_EQ(std::signbit(delta), sign0[j] > 0) << "alpha " << alpha << " step " << t;
        EXPECT_NE(delta, 0.0);
        const double after = m.params()[0][j];
        if (after * sign0[j] < table.delta()) live[j] = false;
      }
    }
  }
}

TEST(MapTraining, ZeroCoefficientIsBitwiseBaseline) {
  const auto& d = small_data();
  TrainConfig cfg = small_config();
  const auto base = train::train(small_mlp(2), d.train, PriorGradient::none(), cfg, &d.test);
  cfg.prior_scale_c = 0.0;
  const auto with_table = train::train(small_mlp(2), d.train, PriorGradient::table(cauchy_table()), cfg, &d.test);
  EXPECT_TRUE(base.final_model == with_table.final_model);
  EXPECT_EQ(base.learning_rates, with_table.learning_rates);
  std::ostringstream a, b;
  write_report_csv(base, a);
  write_report_csv(with_table, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(MapTraining, TrainingIsDeterministicPerSeed) {
  const auto& d = small_data();
  TrainConfig cfg = small_config();
  cfg.prior_scale_c = 1e-3;
  cfg.dropout_rate = 0.2;
  cfg.augment.flip = true;
  const auto prior = PriorGradient::table(cauchy_table());
  const auto a = train::train(small_mlp(3), d.train, prior, cfg);
  const auto b = train::train(small_mlp(3), d.train, prior, cfg);
  EXPECT_TRUE(a.final_model == b.final_model);
  cfg.seed += 1;
  const auto c = train::train(small_mlp(3), d.train, prior, cfg);
  EXPECT_FALSE(a.final_model == c.final_model);
}

TEST(MapTraining, IndependentLoopReproducesTrainer) {
  // Plain re-implementation of the documented loop: seeded Fisher-Yates
  // shuffle per epoch, mean log-likelihood gradient, c times the table value,
  // momentum ascent with the per-step schedule.
  const auto& d = small_data();
  TrainConfig cfg = small_config();
  cfg.prior_scale_c = 0.01;
  cfg.momentum = 0.8;
  cfg.dampening = 0.3;
  const auto rep = train::train(small_mlp(4), d.train, PriorGradient::table(cauchy_table()), cfg);

  Model m = small_mlp(4);
  const std::size_t n = d.train.size(), per = 2 * 4 * 4;
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<Tensor> beta;
  std::size_t t = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng sh = make_rng(cfg.seed, "shuffle", e);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(sh) * static_cast<double>(i))]);
    for (std::size_t b = 0; b < batches; ++b, ++t) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      Tensor x({hi - lo, 2, 4, 4});
      std::vector<int> y;
      for (std::size_t r = lo; r < hi; ++r) {
        for (std::size_t k = 0; k < per; ++k) x[(r - lo) * per + k] = d.train.images[order[r] * per + k];
        y.push_back(d.train.labels[order[r]]);
      }
      auto g = net::backward(m, net::forward(m, x, {.training = true}), net::one_hot(y, 3));
      for (std::size_t p = 0; p < g.size(); ++p)
        if (m.param_info()[p].prior)
          for (std::size_t j = 0; j < g[p].size(); ++j) g[p][j] += cfg.prior_scale_c * cauchy_table().lookup_grad(m.params()[p][j]);
      const double lr = learning_rate_at(cfg.lr_schedule, static_cast<double>(t) / static_cast<double>(cfg.epochs * batches));
      for (std::size_t p = 0; p < g.size(); ++p) {
        if (t == 0) {
          for (std::size_t j = 0; j < g[p].size(); ++j) m.params()[p][j] += lr * g[p][j];
        } else {
          for (std::size_t j = 0; j < g[p].size(); ++j) {
            beta[p][j] = cfg.momentum * beta[p][j] + (1.0 - cfg.dampening) * g[p][j];
            m.params()[p][j] += lr * beta[p][j];
          }
        }
      }
      if (t == 0) beta = g;
    }
  }
  EXPECT_EQ(rep.final_model.params(), m.params());
}

TEST(MapTraining, GaussianTableSubstitutionIsExact) {
  // The alpha = 2 table replaced by the closed form -theta_k / (2 gamma^2)
  // drives the trainer exactly like the closed form evaluated on the key grid.
  const double gamma = 0.8;
  const std::size_t ng = 400;
  const auto built = DerivTable::build(StableParams::symmetric(2.0, gamma), 0.8, ng);
  std::vector<double> closed(2 * ng + 1);
  for (std::int64_t k = -static_cast<std::int64_t>(ng); k <= static_cast<std::int64_t>(ng); ++k)
    closed[static_cast<std::size_t>(k + static_cast<std::int64_t>(ng))] = -built.grid_point(k) / (2.0 * gamma * gamma);
  for (std::size_t i = 0; i < closed.size(); ++i) EXPECT_NEAR(built.values()[i], closed[i], 1e-5);
  const auto substituted = DerivTable::from_values(built.params(), 0.8, ng, closed);

  auto p = zero_input_problem(3, {0.37, -0.61});
  TrainConfig zc;
  zc.prior_scale_c = 2.0;
  zc.epochs = 4;
  zc.batch_size = 1;
  const auto rep = train::train(p.model, p.data, PriorGradient::table(substituted), zc);
  double theta[2] = {0.37, -0.61}, beta[2] = {0, 0};
  for (int t = 0; t < 12; ++t) {
    const double lr = learning_rate_at(zc.lr_schedule, t / 12.0);
    for (int j = 0; j < 2; ++j) {
      const double g = zc.prior_scale_c * (-(static_cast<double>(substituted.key_of(theta[j])) * substituted.delta()) /
                                           (2.0 * gamma * gamma));
      if (t == 0) {
        theta[j] += lr * g;
        beta[j] = g;
      } else {
        beta[j] = zc.momentum * beta[j] + (1.0 - zc.dampening) * g;
        theta[j] += lr * beta[j];
      }
    }
  }
  EXPECT_EQ(rep.final_model.params()[0][0], theta[0]);
  EXPECT_EQ(rep.final_model.params()[0][1], theta[1]);
}

TEST(PriorGradient, LaplaceClosedForm) {
  const auto p = PriorGradient::laplace(0.5);
  EXPECT_EQ(p.kind(), PriorGradient::Kind::Laplace);
  EXPECT_EQ(p(0.3), -2.0);
  EXPECT_EQ(p(-1e-9), 2.0);
  EXPECT_EQ(p(0.0), 0.0);
  EXPECT_FALSE(p.saturates(100.0));
  EXPECT_EQ(p.table_checksum(), 0u);
  EXPECT_THROW(PriorGradient::laplace(0.0), InvalidParameter);
}

TEST(PriorGradient, TableAndNoneKinds) {
  const auto none = PriorGradient::none();
  EXPECT_FALSE(none.active());
  EXPECT_EQ(none(3.0), 0.0);
  const auto t = PriorGradient::table(cauchy_table());
  EXPECT_TRUE(t.active());
  EXPECT_EQ(t(1.0), cauchy_table().lookup_grad(1.0));
  EXPECT_EQ(t.table_checksum(), cauchy_table().checksum());
  EXPECT_FALSE(t.describe().empty());
}

TEST(PriorGradient, OnlyMaskedParametersAreTouched) {
  Model m = small_mlp(1);
  net::Gradients g;
  for (const auto& p : m.params()) g.emplace_back(p.shape(), 0.0);
  PriorAccounting acct;
  add_prior_gradient(m, g, PriorGradient::laplace(1.0), 0.25, &acct);
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (std::size_t j = 0; j < g[p].size(); ++j) {
      const double th = m.params()[p][j];
      const double expected = m.param_info()[p].prior ? 0.25 * (th > 0 ? -1.0 : (th < 0 ? 1.0 : 0.0)) : 0.0;
      EXPECT_EQ(g[p][j], expected);
    }
  }
  EXPECT_EQ(acct.lookups, m.prior_parameter_count());
  EXPECT_EQ(acct.saturated, 0u);
}

TEST(Evaluate, UniformOutputsScoreOneOverK) {
  const auto d = data::make_synthetic(90, 3, {2, 4, 4}, 1.0, 1);
  Model m = net::mlp({2, 4, 4}, {}, 3);
  for (auto& p : m.params()) p.fill(0.0);
  const auto e = evaluate(m, d, 7);
  EXPECT_NEAR(e.accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(e.mean_log_likelihood, -std::log(3.0), 1e-14);
}

TEST(Evaluate, PerfectOutputsScoreOneAndZero) {
  LabeledDataset d;
  d.classes = 3;
  d.labels = {0, 1, 2, 1};
  d.images = Tensor({4, 3, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) d.images[i * 3 + static_cast<std::size_t>(d.labels[i])] = 1.0;
  Model m = net::mlp({3, 1, 1}, {}, 3);
  m.params()[0].fill(0.0);
  for (std::size_t k = 0; k < 3; ++k) m.params()[0][k * 3 + k] = 1000.0;
  const auto e = evaluate(m, d);
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.mean_log_likelihood, 0.0);
  const auto again = evaluate(m, d);
  EXPECT_EQ(again.accuracy, e.accuracy);
  EXPECT_EQ(again.mean_log_likelihood, e.mean_log_likelihood);
}

TEST(Evaluate, RejectsIncompatibleModels) {
  const auto d = data::make_synthetic(10, 3, {2, 4, 4}, 1.0, 1);
  EXPECT_THROW(evaluate(net::mlp({2, 4, 4}, {}, 4), d), ShapeMismatch);
  EXPECT_THROW(evaluate(net::mlp({3, 4, 4}, {}, 3), d), ShapeMismatch);
}

TEST(TrainDiagnostics, SaturatedTableWarns) {
  const auto& d = small_data();
  TrainConfig cfg = small_config();
  cfg.prior_scale_c = 1e-3;
  const auto narrow = DerivTable::build(StableParams::symmetric(1.0, 1.0), 0.01, 10);
  const auto rep = train::train(small_mlp(1), d.train, PriorGradient::table(narrow), cfg);
  ASSERT_EQ(rep.warnings.size(), cfg.epochs);
  EXPECT_NE(rep.warnings[0].find("TableDomainWarning"), std::string::npos);
  EXPECT_GT(rep.epochs[0].saturated_fraction, 0.5);

  const auto wide = train::train(small_mlp(1), d.train, PriorGradient::table(cauchy_table()), cfg);
  EXPECT_TRUE(wide.warnings.empty());
  EXPECT_EQ(wide.epochs[0].saturated_fraction, 0.0);
}

TEST(TrainDiagnostics, NonFiniteGradientAbortsWithLocation) {
  auto d = small_data().train;
  d.images[5] = std::numeric_limits<double>::quiet_NaN();
  try {
    train::train(small_mlp(1), d, PriorGradient::none(), small_config());
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("layer"), std::string::npos);
    EXPECT_NE(msg.find("epoch 0"), std::string::npos);
  }
}

TEST(TrainReport, RecordsEveryEpochWithTestColumns) {
  const auto& d = small_data();
  const auto rep = train::train(small_mlp(1), d.train, PriorGradient::none(), small_config(), &d.test);
  ASSERT_EQ(rep.epochs.size(), 3u);
  for (const auto& e : rep.epochs) {
    EXPECT_GE(e.train_accuracy, 0.0);
    EXPECT_LE(e.train_accuracy, 1.0);
    EXPECT_GE(e.test_accuracy, 0.0);
    EXPECT_LE(e.test_accuracy, 1.0);
    EXPECT_LE(e.train_log_likelihood, 0.0);
  }
  EXPECT_EQ(rep.epochs.back().test_accuracy, evaluate(rep.final_model, d.test).accuracy);
  EXPECT_GT(rep.epochs.back().test_accuracy, 0.6);
  EXPECT_EQ(rep.seed, 9u);
  const auto no_test = train::train(small_mlp(1), d.train, PriorGradient::none(), small_config());
  EXPECT_TRUE(std::isnan(no_test.epochs[0].test_accuracy));
}

TEST(Grid, SingleCellEqualsDirectTrain) {
  const auto& d = small_data();
  GridSpec spec;
  spec.base = small_config();
  spec.alphas = {1.5};
  spec.gammas = {1.0};
  spec.cs = {1e-3};
  spec.seeds = {3};
  spec.include_baseline = false;
  spec.table_grid = 200;
  spec.prune_fractions = {0.5};
  const auto rows = run_experiment_grid(spec, {&d.train, &d.validation, &d.test}, small_mlp);
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_TRUE(rows[0].error.empty()) << rows[0].error;

  TrainConfig cfg = spec.base;
  cfg.prior_scale_c = 1e-3;
  cfg.seed = 3;
  const auto table = DerivTable::build(StableParams::symmetric(1.5, 1.0), spec.table_epsilon, 200);
  const auto rep = train::train(small_mlp(3), d.train, PriorGradient::table(table), cfg);
  EXPECT_EQ(rows[0].train_accuracy, rep.epochs.back().train_accuracy);
  EXPECT_EQ(rows[0].validation_accuracy, evaluate(rep.final_model, d.validation).accuracy);
  EXPECT_EQ(rows[0].test_accuracy, evaluate(rep.final_model, d.test).accuracy);
  EXPECT_EQ(rows[0].table_checksum, table.checksum());
  EXPECT_EQ(rows[0].prior, "stable");
  EXPECT_EQ(rows[0].pruned_accuracy.size(), 1u);
}

TEST(Grid, TwoSeedsGiveTwoRowsAndAMean) {
  const auto& d = small_data();
  GridSpec spec;
  spec.base = small_config();
  spec.base.epochs = 1;
  spec.alphas = {1.0};
  spec.gammas = {1.0};
  spec.cs = {1e-3};
  spec.seeds = {1, 2};
  spec.include_laplace = true;
  spec.table_grid = 100;
  const auto rows = run_experiment_grid(spec, {&d.train, nullptr, &d.test}, small_mlp);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].prior, "none");
  EXPECT_EQ(rows[2].prior, "stable");
  EXPECT_EQ(rows[4].prior, "laplace");
  EXPECT_TRUE(std::isnan(rows[0].validation_accuracy));

  std::ostringstream csv;
  write_grid_csv(spec, rows, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 6u + 3u);
  EXPECT_EQ(lines[0].rfind("prior,alpha,gamma,c,seed,", 0), 0u);
  EXPECT_NE(lines[7].find(",mean,"), std::string::npos);
  const double mean_test = 0.5 * (rows[2].test_accuracy + rows[3].test_accuracy);
  std::ostringstream expect;
  expect.precision(17);
  expect << mean_test;
  EXPECT_NE(lines[8].find(expect.str()), std::string::npos);
}

TEST(Grid, ThreadCountDoesNotChangeRows) {
  const auto& d = small_data();
  GridSpec spec;
  spec.base = small_config();
  spec.base.epochs = 1;
  spec.alphas = {2.0, 0.8};
  spec.gammas = {1.0};
  spec.cs = {1e-2};
  spec.seeds = {1, 2};
  spec.table_grid = 100;
  const auto serial = run_experiment_grid(spec, {&d.train, &d.validation, &d.test}, small_mlp);
  spec.threads = 4;
  const auto parallel = run_experiment_grid(spec, {&d.train, &d.validation, &d.test}, small_mlp);
  std::ostringstream a, b;
  write_grid_csv(spec, serial, a);
  write_grid_csv(spec, parallel, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Grid, FailingCellDoesNotAbortGrid) {
  const auto& d = small_data();
  GridSpec spec;
  spec.base = small_config();
  spec.base.epochs = 1;
  spec.alphas = {1.0};
  spec.gammas = {1.0};
  spec.cs = {1e-3};
  spec.seeds = {1};
  spec.table_grid = 100;
  int calls = 0;
  auto factory = [&](std::uint64_t s) {
    if (++calls == 1) return net::init_xavier_uniform(net::mlp({2, 4, 4}, {8}, 5), s);  // wrong class count
    return small_mlp(s);
  };
  const auto rows = run_experiment_grid(spec, {&d.train, nullptr, &d.test}, factory);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].error.empty());
  EXPECT_TRUE(rows[1].error.empty());
  std::ostringstream csv;
  write_grid_csv(spec, rows, csv);
  EXPECT_NE(csv.str().find("\""), std::string::npos);
}

TEST(Grid, RejectsInvalidSpecs) {
  const auto& d = small_data();
  GridSpec spec;
  spec.base = small_config();
  spec.seeds = {};
  EXPECT_THROW(run_experiment_grid(spec, {&d.train, nullptr, nullptr}, small_mlp), InvalidParameter);
  spec.seeds = {1};
  spec.alphas = {1.0};
  spec.gammas = {1.0};
  spec.cs = {0.0};
  EXPECT_THROW(run_experiment_grid(spec, {&d.train, nullptr, nullptr}, small_mlp), InvalidParameter);
  spec.cs = {1e-3};
  EXPECT_THROW(run_experiment_grid(spec, {nullptr, nullptr, nullptr}, small_mlp), InvalidParameter);
}
