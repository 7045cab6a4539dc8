#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace softdiamond::quad {

/// Fixed-order Gauss-Legendre rule on [-1, 1].
class GaussLegendre {
 public:
  explicit GaussLegendre(std::size_t order);

  std::size_t order() const noexcept { return nodes_.size(); }
  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }

  template <class F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      sum += weights_[i] * f(mid + half * nodes_[i]);
    }
    return half * sum;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Shared 20-point rule.
const GaussLegendre& gauss20();

struct AdaptiveResult {
  double value = 0.0;
  std::size_t intervals = 0;  // number of accepted sub-intervals
  bool converged = true;
};

/// Recursive bisection with a Gauss-Legendre rule: a sub-interval is accepted
/// when the rule on the whole and on its two halves agree to `abs_tol`
/// (tolerance is split between halves on refinement), or when they agree to
/// rounding. Hitting `max_depth` or `max_intervals` first leaves
/// `converged` false.
AdaptiveResult adaptive_gauss(const std::function<double(double)>& f, double a, double b,
                              double abs_tol, int max_depth = 60,
                              std::size_t max_intervals = std::numeric_limits<std::size_t>::max());

/// Wynn epsilon extrapolation of a sequence of partial sums. Returns the
/// highest-order even-column estimate available.
double wynn_epsilon(std::span<const double> partial_sums);

}  // namespace softdiamond::quad
