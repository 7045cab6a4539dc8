#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "softdiamond/model.hpp"
#include "softdiamond/stable_density.hpp"

namespace softdiamond::analysis {

/// Values of every prior-masked parameter in scan order.
std::vector<double> prior_weights(const net::Model& model);

struct LayerSparsity {
  std::size_t layer = 0;
  std::string kind;
  std::size_t count = 0;
  std::size_t below = 0;
  double fraction = 0.0;
};

struct SparsityReport {
  double tau = 0.0;
  std::size_t count = 0;
  std::size_t below = 0;  // |w| <= tau
  double fraction = 0.0;
  std::vector<LayerSparsity> layers;
  double kurtosis = 0.0;  // m4 / m2^2 (3 for a Gaussian); 0 when all weights are equal
};

SparsityReport sparsity(const net::Model& model, double tau);
/// Same statistics for a bare weight list (reported as a single layer 0).
SparsityReport sparsity_of(std::span<const double> weights, double tau);

struct PruneResult {
  net::Model model;
  /// Per parameter tensor, 1 = kept. Non-prior tensors are all ones.
  std::vector<std::vector<std::uint8_t>> mask;
  std::size_t pruned = 0;
  std::size_t total = 0;  // prior-masked weights considered
};

/// Zeroes the floor(fraction * total) smallest-magnitude prior-masked weights,
/// ranking globally; equal magnitudes are pruned in scan order.
PruneResult magnitude_prune(const net::Model& model, double fraction);

struct PrunePoint {
  double fraction = 0.0;
  std::size_t pruned = 0;
  double accuracy = 0.0;
};
std::vector<PrunePoint> prune_sweep(const net::Model& model, std::span<const double> fractions,
                                    const std::function<double(const net::Model&)>& accuracy);

struct KdeCurve {
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> density;
  /// Trapezoid integral over the grid.
  double mass() const;
};

KdeCurve kde(std::span<const double> samples, double bandwidth, std::span<const double> grid);
/// Gaussian-kernel KDE of the prior-masked weights. Throws EmptyModel.
KdeCurve weight_kde(const net::Model& model, double bandwidth, std::span<const double> grid);

/// `points` evenly spaced values from lo to hi inclusive.
std::vector<double> linear_grid(double lo, double hi, std::size_t points);

// ---- constraint-set geometry -------------------------------------------------

struct ContourPoint {
  double angle = 0.0;
  double radius = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
};

struct GeometryContour {
  stable::StableParams params = stable::StableParams::symmetric(2.0, 1.0);
  double kappa = 0.0;
  /// resolution + 1 points; the last repeats the first.
  std::vector<ContourPoint> points;

  double max_radial_deviation() const;  // (max r - min r) / mean r
};

/// Quadrature settings used by the geometry routines when none are given.
stable::QuadratureConfig geometry_quadrature();

/// 2 ln h(0): the largest attainable level.
double max_level(const stable::StableParams& params, const stable::QuadratureConfig& quad);

/// Level whose contour crosses the axes at distance `radius`.
double kappa_for_axis_radius(const stable::StableParams& params, double radius,
                             const stable::QuadratureConfig& quad);

/// Distance from the origin to the level set along direction (c, s), by bisection.
/// Throws EmptyLevelSet or RootNotBracketed.
double ray_radius(const stable::StableParams& params, double kappa, double c, double s,
                  const stable::QuadratureConfig& quad);

/// Radial tracing on `resolution` equally spaced angles starting at 0.
GeometryContour constraint_contour(const stable::StableParams& params, double kappa,
                                   std::size_t resolution,
                                   const stable::QuadratureConfig& quad = geometry_quadrature());

/// Radius at 45 degrees over radius on the axis for the same level.
double diagonal_axis_ratio(const stable::StableParams& params, double kappa,
                           const stable::QuadratureConfig& quad = geometry_quadrature());

/// f(theta) = (theta - target)^T A (theta - target), A symmetric positive definite.
struct QuadraticObjective {
  std::array<double, 4> a{1.0, 0.0, 0.0, 1.0};  // row-major 2x2
  std::array<double, 2> target{1.0, 2.5};

  double operator()(double t1, double t2) const;
  void validate() const;
};

struct ToySolution {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double objective = 0.0;
  bool on_boundary = false;
};

/// Minimizes the quadratic subject to ln h(t1) + ln h(t2) >= kappa. A coarse
/// scan over boundary angles (axes included) is refined by golden section.
ToySolution toy_lse_solve(const QuadraticObjective& objective, const stable::StableParams& params,
                          double kappa, const stable::QuadratureConfig& quad = geometry_quadrature(),
                          std::size_t scan_angles = 256);

// ---- CSV emitters --------------------------------------------------------------

void write_contour_csv(const GeometryContour& contour, std::ostream& out);
void write_kde_csv(const KdeCurve& curve, std::ostream& out);
void write_prune_csv(std::span<const PrunePoint> points, std::ostream& out);
void write_sparsity_csv(const SparsityReport& report, std::ostream& out);

}  // namespace softdiamond::analysis
