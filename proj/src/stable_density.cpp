#include "softdiamond/stable_density.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>
#include <sstream>

#include "softdiamond/error.hpp"
#include "softdiamond/quadrature.hpp"

namespace softdiamond::stable {

namespace {

constexpr double kPi = std::numbers::pi;

// Half-periods summed directly before the oscillatory tail is extrapolated.
constexpr std::size_t kDirectHalfPeriods = 200;
constexpr std::size_t kWarmupTerms = 8;
constexpr std::size_t kWynnWindow = 40;

std::string describe(const StableParams& p) {
  std::ostringstream os;
  os << "(alpha=" << p.alpha() << ", gamma=" << p.gamma() << ", mu=" << p.mu() << ")";
  return os.str();
}

// Upper end of the frequency range on the standardized axis u = gamma * omega
// such that the discarded envelope mass int_U^inf exp(-u^a) du stays below
// `tail_tol`.
double truncation_point(double alpha, double cutoff, double tail_tol) {
  double s = -std::log(cutoff);
  const double a = 1.0 / alpha;
  for (int i = 0; i < 400; ++i) {
    const double tail = a * boost::math::tgamma(a, s);
    if (tail <= tail_tol) break;
    s *= 1.25;
  }
  return std::pow(s, a);
}

struct PanelBudget {
  std::size_t used = 0;
  std::size_t limit = 0;
};

double integrate_panel(double alpha, double x, double lo, double hi, double tol,
                       PanelBudget& budget) {
  auto f = [alpha, x](double u) { return std::exp(-std::pow(u, alpha)) * std::cos(u * x); };
  auto run = [&](double a, double b, double t) {
    const std::size_t left = budget.limit > budget.used ? budget.limit - budget.used : 0;
    auto r = quad::adaptive_gauss(f, a, b, t, 60, left);
    budget.used += r.intervals;
    if (budget.used > budget.limit) {
      throw QuadratureFailure("exceeded " + std::to_string(budget.limit) + " panels (alpha=" + std::to_string(alpha) + ")");
    }
    if (!r.converged) {
      throw QuadratureFailure("panel [" + std::to_string(a) + ", " + std::to_string(b) +
                              "] did not converge");
    }
    return r.value;
  };
  if (lo > 0.0) return run(lo, hi, tol);
  // u^alpha is not smooth at 0: split geometrically towards the origin so
  // every sub-panel [a, 2a] sees an analytic integrand.
  constexpr int kLevels = 60;
  const double sub_tol = tol / (kLevels + 1);
  double sum = 0.0;
  double b = hi;
  for (int level = 0; level < kLevels; ++level) {
    const double a = 0.5 * b;
    sum += run(a, b, sub_tol);
    b = a;
  }
  return sum + run(0.0, b, sub_tol);
}

// I(x) = int_0^inf exp(-u^alpha) cos(u x) du for x >= 0, to absolute
// accuracy `tol`.
double cosine_transform(double alpha, double x, double tol, const QuadratureConfig& quad) {
  PanelBudget budget{0, quad.max_panels};
  const double upper = truncation_point(alpha, quad.omega_max_cutoff, 0.25 * tol);
  auto check_budget = [&] {
    if (budget.used > budget.limit) {
      throw QuadratureFailure("exceeded " + std::to_string(budget.limit) +
                              " panels (alpha=" + std::to_string(alpha) + ")");
    }
  };

  if (x == 0.0) {
    return integrate_panel(alpha, 0.0, 0.0, upper, 0.5 * tol, budget);
  }

  const double half_period = kPi / x;
  const double n_half_periods = upper / half_period;
  if (n_half_periods <= static_cast<double>(kDirectHalfPeriods)) {
    // Panels between consecutive zeros of cos(u x), cut at `upper`.
    const auto n_zeros = static_cast<std::size_t>(std::floor(n_half_periods + 0.5));
    const double panel_tol = 0.5 * tol / static_cast<double>(n_zeros + 1);
    double sum = 0.0;
    double lo = 0.0;
    for (std::size_t k = 0; k <= n_zeros; ++k) {
      const double hi = std::min(upper, (static_cast<double>(k) + 0.5) * half_period);
      if (hi > lo) sum += integrate_panel(alpha, x, lo, hi, panel_tol, budget);
      lo = hi;
      check_budget();
    }
    if (upper > lo) sum += integrate_panel(alpha, x, lo, upper, panel_tol, budget);
    return sum;
  }

  // Alternating series over half-periods, accelerated with Wynn's epsilon.
  const double panel_tol = 1e-3 * tol;
  std::vector<double> partial;
  partial.reserve(256);
  double sum = 0.0;
  double lo = 0.0;
  double last_estimate = 0.0;
  int stable_count = 0;
  for (std::size_t k = 0;; ++k) {
    const double hi = (static_cast<double>(k) + 0.5) * half_period;
    if (lo >= upper) return sum;  // the envelope already ran out
    sum += integrate_panel(alpha, x, lo, std::min(hi, upper), panel_tol, budget);
    lo = hi;
    check_budget();
    if (k < kWarmupTerms) continue;
    partial.push_back(sum);
    if (partial.size() < 6) continue;
    const std::size_t window = std::min(partial.size(), kWynnWindow);
    std::span<const double> tail(partial.data() + partial.size() - window, window);
    const double estimate = quad::wynn_epsilon(tail);
    if (std::abs(estimate - last_estimate) <= 0.05 * tol) {
      if (++stable_count >= 3) return estimate;
    } else {
      stable_count = 0;
    }
    last_estimate = estimate;
  }
}

}  // namespace

StableParams::StableParams(double alpha, double beta, double gamma, double mu)
    : alpha_(alpha), beta_(beta), gamma_(gamma), mu_(mu) {
  if (!(alpha > 0.0 && alpha <= 2.0)) {
    throw InvalidParameter("alpha must lie in (0, 2], got " + std::to_string(alpha));
  }
  if (!(beta >= -1.0 && beta <= 1.0)) {
    throw InvalidParameter("beta must lie in [-1, 1], got " + std::to_string(beta));
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidParameter("gamma must be positive, got " + std::to_string(gamma));
  }
  if (!std::isfinite(mu)) throw InvalidParameter("mu must be finite");
}

void QuadratureConfig::validate() const {
  if (!(abs_tol > 0.0)) throw InvalidParameter("abs_tol must be positive");
  if (!(omega_max_cutoff > 0.0 && omega_max_cutoff < 1.0)) {
    throw InvalidParameter("omega_max_cutoff must lie in (0, 1)");
  }
  if (max_panels < 1) throw InvalidParameter("max_panels must be at least 1");
}

std::complex<double> characteristic_fn(const StableParams& p, double omega) {
  if (omega == 0.0) return {1.0, 0.0};
  const double alpha = p.alpha();
  const double scale = std::pow(std::abs(p.gamma() * omega), alpha);
  const double phi = alpha == 1.0 ? -(2.0 / kPi) * std::log(std::abs(omega))
                                  : std::tan(0.5 * kPi * alpha);
  const double sgn = omega > 0.0 ? 1.0 : -1.0;
  const std::complex<double> exponent(-scale, omega * p.mu() + scale * p.beta() * sgn * phi);
  return std::exp(exponent);
}

double pdf(const StableParams& p, double theta, const QuadratureConfig& quad) {
  if (p.beta() != 0.0) throw NonSymmetric("density is only available for beta = 0");
  quad.validate();
  const double gamma = p.gamma();
  const double x = std::abs(theta - p.mu()) / gamma;
  if (!quad.force_generic) {
    if (p.alpha() == 2.0) return std::exp(-0.25 * x * x) / (2.0 * gamma * std::sqrt(kPi));
    if (p.alpha() == 1.0) return 1.0 / (kPi * gamma * (1.0 + x * x));
  }
  if (!std::isfinite(x)) return 0.0;
  // h(theta) = I(x) / (pi gamma), so I needs accuracy abs_tol * pi * gamma.
  const double tol = quad.abs_tol * kPi * gamma;
  double value = 0.0;
  try {
    value = cosine_transform(p.alpha(), x, tol, quad);
  } catch (const QuadratureFailure& e) {
    throw QuadratureFailure(std::string(e.what()) + " at theta=" + std::to_string(theta) + " " +
                            describe(p));
  }
  return std::max(0.0, value / (kPi * gamma));
}

double log_pdf(const StableParams& p, double theta, const QuadratureConfig& quad) {
  const double h = pdf(p, theta, quad);
  if (h < 1e-300) return kLogPdfFloor;
  return std::log(h);
}

double sample_one(const StableParams& p, Rng& rng) {
  if (p.beta() != 0.0) throw NonSymmetric("sampler is only available for beta = 0");
  double u = 0.0;
  do {
    u = uniform01(rng);
  } while (u == 0.0);
  const double v = kPi * (u - 0.5);  // angle in (-pi/2, pi/2)
  double w = 0.0;  // Exp(1), strictly positive
  do {
    w = -std::log(1.0 - uniform01(rng));
  } while (w == 0.0);
  const double alpha = p.alpha();
  double x = 0.0;
  if (alpha == 1.0) {
    x = std::tan(v);
  } else {
    x = std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha) *
        std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
  }
  return p.gamma() * x + p.mu();
}

std::vector<double> sample(const StableParams& p, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, "stable.sample");
  std::vector<double> out(n);
  for (auto& v : out) v = sample_one(p, rng);
  return out;
}

}  // namespace softdiamond::stable
