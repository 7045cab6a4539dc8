#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "softdiamond/rng.hpp"

namespace softdiamond::stable {

/// Parameters (alpha, beta, gamma, mu) of a stable law: stability, skewness,
/// dispersion, location. Construction validates the ranges.
class StableParams {
 public:
  StableParams(double alpha, double beta, double gamma, double mu);

  /// beta = 0.
  static StableParams symmetric(double alpha, double gamma, double mu = 0.0) {
    return StableParams(alpha, 0.0, gamma, mu);
  }

  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  double gamma() const noexcept { return gamma_; }
  double mu() const noexcept { return mu_; }

  bool operator==(const StableParams&) const = default;

 private:
  double alpha_;
  double beta_;
  double gamma_;
  double mu_;
};

struct QuadratureConfig {
  double abs_tol = 1e-9;
  /// Envelope level exp(-(gamma w)^alpha) at which the frequency range is cut.
  /// The cut is pushed further out when the analytic tail bound says the
  /// discarded mass would exceed abs_tol.
  double omega_max_cutoff = 1e-12;
  std::size_t max_panels = 1'000'000;
  /// Skip the Gaussian/Cauchy closed forms (used to audit the quadrature).
  bool force_generic = false;

  void validate() const;
};

/// ln(1e-300): value returned by log_pdf when the density underflows.
inline constexpr double kLogPdfFloor = -690.7755278982137;

std::complex<double> characteristic_fn(const StableParams& params, double omega);

/// Density of a symmetric stable law. Throws NonSymmetric for beta != 0 and
/// QuadratureFailure when abs_tol cannot be met within max_panels.
double pdf(const StableParams& params, double theta, const QuadratureConfig& quad = {});

double log_pdf(const StableParams& params, double theta, const QuadratureConfig& quad = {});

/// One Chambers-Mallows-Stuck draw of a symmetric stable variate.
double sample_one(const StableParams& params, Rng& rng);

/// n draws, deterministic in `seed`.
std::vector<double> sample(const StableParams& params, std::size_t n, std::uint64_t seed);

}  // namespace softdiamond::stable
