#include "softdiamond/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace softdiamond::quad {

GaussLegendre::GaussLegendre(std::size_t order) : nodes_(order), weights_(order) {
  // Newton iteration on P_n from the Chebyshev-like initial guess.
  const std::size_t n = order;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes_[i] = -x;
    nodes_[n - 1 - i] = x;
    weights_[i] = w;
    weights_[n - 1 - i] = w;
  }
  if (n % 2 == 1) nodes_[n / 2] = 0.0;
}

const GaussLegendre& gauss20() {
  static const GaussLegendre rule(20);
  return rule;
}

namespace {

void refine(const std::function<double(double)>& f, double a, double b, double whole,
            double tol, int depth, std::size_t max_intervals, AdaptiveResult& out) {
  const GaussLegendre& g = gauss20();
  const double m = 0.5 * (a + b);
  const double left = g.integrate(f, a, m);
  const double right = g.integrate(f, m, b);
  const double split = left + right;
  const double diff = std::abs(split - whole);
  // Halving the tolerance eventually asks for less than the rounding error of
  // the rule itself; agreement at that level is as good as it gets.
  const double roundoff =
      64.0 * std::numeric_limits<double>::epsilon() * std::max({std::abs(left), std::abs(right), std::abs(whole)});
  const bool exhausted = depth <= 0 || out.intervals + 2 > max_intervals;
  if (diff <= tol || diff <= roundoff || exhausted || m <= a || m >= b) {
    if (exhausted && diff > tol && diff > roundoff) out.converged = false;
    out.value += split;
    out.intervals += 2;
    return;
  }
  refine(f, a, m, left, 0.5 * tol, depth - 1, max_intervals, out);
  refine(f, m, b, right, 0.5 * tol, depth - 1, max_intervals, out);
}

}  // namespace

AdaptiveResult adaptive_gauss(const std::function<double(double)>& f, double a, double b,
                              double abs_tol, int max_depth, std::size_t max_intervals) {
  AdaptiveResult out;
  if (b == a) return out;
  const double whole = gauss20().integrate(f, a, b);
  refine(f, a, b, whole, abs_tol, max_depth, max_intervals, out);
  return out;
}

double wynn_epsilon(std::span<const double> s) {
  const std::size_t n = s.size();
  if (n == 0) return 0.0;
  if (n < 3) return s[n - 1];
  // eps[k] holds column k of the current anti-diagonal.
  std::vector<double> prev(s.begin(), s.end());  // column 0
  std::vector<double> prev_prev(n + 1, 0.0);     // column -1 (zeros)
  double best = s[n - 1];
  for (std::size_t col = 1; col < n; ++col) {
    std::vector<double> cur(n - col);
    bool ok = true;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double diff = prev[i + 1] - prev[i];
      if (diff == 0.0 || !std::isfinite(diff)) {
        ok = false;
        break;
      }
      cur[i] = prev_prev[i + 1] + 1.0 / diff;
    }
    if (!ok) break;
    if (col % 2 == 0) best = cur.back();
    prev_prev = std::move(prev);
    prev = std::move(cur);
  }
  return best;
}

}  // namespace softdiamond::quad
