#include "softdiamond/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>

#include "softdiamond/error.hpp"

namespace softdiamond::analysis {

using net::Model;

std::vector<double> prior_weights(const Model& model) {
  std::vector<double> out;
  out.reserve(model.prior_parameter_count());
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    if (!model.param_info()[p].prior) continue;
    const auto v = model.params()[p].data();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

namespace {

double kurtosis_of(std::span<const double> w) {
  if (w.empty()) return 0.0;
  const double n = static_cast<double>(w.size());
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : w) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  return m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidParameter("tau: sparsity threshold must be finite and > 0");
}

}  // namespace

SparsityReport sparsity(const Model& model, double tau) {
  check_tau(tau);
  SparsityReport r;
  r.tau = tau;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    LayerSparsity ls;
    ls.layer = i;
    ls.kind = net::to_string(model.layers()[i].kind);
    for (std::size_t p : model.layer_params(i)) {
      if (!model.param_info()[p].prior) continue;
      for (double v : model.params()[p].data()) {
        ++ls.count;
        if (std::abs(v) <= tau) ++ls.below;
      }
    }
    if (ls.count == 0) continue;
    ls.fraction = static_cast<double>(ls.below) / static_cast<double>(ls.count);
    r.count += ls.count;
    r.below += ls.below;
    r.layers.push_back(std::move(ls));
  }
  r.fraction = r.count ? static_cast<double>(r.below) / static_cast<double>(r.count) : 0.0;
  r.kurtosis = kurtosis_of(prior_weights(model));
  return r;
}

SparsityReport sparsity_of(std::span<const double> weights, double tau) {
  check_tau(tau);
  SparsityReport r;
  r.tau = tau;
  r.count = weights.size();
  r.below = static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [tau](double v) { return std::abs(v) <= tau; }));
  r.fraction = r.count ? static_cast<double>(r.below) / static_cast<double>(r.count) : 0.0;
  if (r.count) r.layers.push_back({0, "weights", r.count, r.below, r.fraction});
  r.kurtosis = kurtosis_of(weights);
  return r;
}

PruneResult magnitude_prune(const Model& model, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InvalidParameter("fraction: must lie in [0, 1)");
  PruneResult out{model, {}, 0, 0};
  auto& params = out.model.params();
  out.mask.resize(params.size());
  struct Ref {
    std::size_t tensor, index;
    double mag;
  };
  std::vector<Ref> refs;
  for (std::size_t p = 0; p < params.size(); ++p) {
    out.mask[p].assign(params[p].size(), 1);
    if (!model.param_info()[p].prior) continue;
    for (std::size_t j = 0; j < params[p].size(); ++j) refs.push_back({p, j, std::abs(params[p][j])});
  }
  out.total = refs.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(refs.size())));
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.mag < b.mag; });
  for (std::size_t i = 0; i < k; ++i) {
    params[refs[i].tensor][refs[i].index] = 0.0;
    out.mask[refs[i].tensor][refs[i].index] = 0;
  }
  out.pruned = k;
  return out;
}

std::vector<PrunePoint> prune_sweep(const Model& model, std::span<const double> fractions,
                                    const std::function<double(const Model&)>& accuracy) {
  std::vector<PrunePoint> out;
  for (double f : fractions) {
    PruneResult pr = magnitude_prune(model, f);
    out.push_back({f, pr.pruned, accuracy(pr.model)});
  }
  return out;
}

double KdeCurve::mass() const {
  double m = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) m += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
  return m;
}

KdeCurve kde(std::span<const double> samples, double bandwidth, std::span<const double> grid) {
  if (samples.empty()) throw EmptyModel("no weights to estimate a density from");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw InvalidParameter("bandwidth: must be finite and > 0");
  KdeCurve c;
  c.bandwidth = bandwidth;
  c.grid.assign(grid.begin(), grid.end());
  c.density.assign(grid.size(), 0.0);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  const double inv_h = 1.0 / bandwidth;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double w : samples) {
      const double z = (grid[g] - w) * inv_h;
      s += std::exp(-0.5 * z * z);
    }
    c.density[g] = s * norm;
  }
  return c;
}

KdeCurve weight_kde(const Model& model, double bandwidth, std::span<const double> grid) {
  const auto w = prior_weights(model);
  if (w.empty()) throw EmptyModel("model has no prior-masked weights");
  return kde(w, bandwidth, grid);
}

std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points == 0) throw InvalidParameter("points: must be >= 1");
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw InvalidParameter("range: need finite lo <= hi");
  std::vector<double> g(points);
  if (points == 1) {
    g[0] = lo;
    return g;
  }
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) g[i] = lo + step * static_cast<double>(i);
  g.back() = hi;
  return g;
}

// ---- geometry ---------------------------------------------------------------

stable::QuadratureConfig geometry_quadrature() {
  stable::QuadratureConfig q;
  q.abs_tol = 1e-11;
  return q;
}

double max_level(const stable::StableParams& params, const stable::QuadratureConfig& quad) {
  return 2.0 * stable::log_pdf(params, params.mu(), quad);
}

double kappa_for_axis_radius(const stable::StableParams& params, double radius,
                             const stable::QuadratureConfig& quad) {
  return stable::log_pdf(params, params.mu() + radius, quad) + stable::log_pdf(params, params.mu(), quad);
}

namespace {

void check_centered(const stable::StableParams& params) {
  if (params.mu() != 0.0) throw InvalidParameter("mu: constraint geometry is traced about the origin; mu must be 0");
}

}  // namespace

double ray_radius(const stable::StableParams& params, double kappa, double c, double s,
                  const stable::QuadratureConfig& quad) {
  check_centered(params);
  const double top = max_level(params, quad);
  if (!(kappa < top)) {
    throw EmptyLevelSet("kappa = " + std::to_string(kappa) + " is not below the maximum level 2 ln h(0) = " +
                        std::to_string(top));
  }
  if (top - kappa <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(kappa))) {
    throw RootNotBracketed("kappa is within rounding of the maximum level; the contour is not resolvable");
  }
  auto f = [&](double r) { return stable::log_pdf(params, r * c, quad) + stable::log_pdf(params, r * s, quad) - kappa; };

  const double scale = params.gamma();
  double lo = 0.0, hi = scale;
  while (f(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e15 * scale) {
      throw RootNotBracketed("no sign change along the ray up to r = " + std::to_string(hi) +
                             " (kappa below the attainable floor?)");
    }
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  // whichever end sits closer to the level
  return std::abs(f(lo)) <= std::abs(f(hi)) ? lo : hi;
}

GeometryContour constraint_contour(const stable::StableParams& params, double kappa, std::size_t resolution,
                                   const stable::QuadratureConfig& quad) {
  if (resolution < 4) throw InvalidParameter("resolution: need at least 4 angles");
  GeometryContour g{params, kappa, {}};
  g.points.reserve(resolution + 1);
  const double two_pi = 2.0 * std::numbers::pi;

  if (resolution % 8 == 0) {
    // Level sets of a symmetric product density are invariant under sign
    // flips and coordinate swaps: trace one octant and reflect it.
    const std::size_t q = resolution / 4, half = q / 2;
    std::vector<double> rad(half + 1), cs(half + 1), sn(half + 1);
    for (std::size_t j = 0; j <= half; ++j) {
      const double psi = two_pi * static_cast<double>(j) / static_cast<double>(resolution);
      cs[j] = j == 0 ? 1.0 : std::cos(psi);
      sn[j] = j == 0 ? 0.0 : std::sin(psi);
      rad[j] = ray_radius(params, kappa, cs[j], sn[j], quad);
    }
    for (std::size_t i = 0; i < resolution; ++i) {
      const std::size_t quadrant = i / q, k = i % q;
      const bool mirrored = k > half;
      const std::size_t j = mirrored ? q - k : k;
      double a = rad[j] * cs[j], b = rad[j] * sn[j];
      if (mirrored) std::swap(a, b);
      double x = a, y = b;  // first-quadrant point, then rotate by quadrant * 90 degrees
      for (std::size_t r = 0; r < quadrant; ++r) {
        const double t = x;
        x = -y;
        y = t;
      }
      g.points.push_back({two_pi * static_cast<double>(i) / static_cast<double>(resolution), rad[j], x, y});
    }
  } else {
    for (std::size_t i = 0; i < resolution; ++i) {
      const double phi = two_pi * static_cast<double>(i) / static_cast<double>(resolution);
      const double c = std::cos(phi), s = std::sin(phi);
      const double r = ray_radius(params, kappa, c, s, quad);
      g.points.push_back({phi, r, r * c, r * s});
    }
  }
  ContourPoint last = g.points.front();
  last.angle = two_pi;
  g.points.push_back(last);
  return g;
}

double GeometryContour::max_radial_deviation() const {
  if (points.empty()) return 0.0;
  double lo = points[0].radius, hi = lo, sum = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    lo = std::min(lo, points[i].radius);
    hi = std::max(hi, points[i].radius);
    sum += points[i].radius;
  }
  return (hi - lo) / (sum / static_cast<double>(points.size() - 1));
}

double diagonal_axis_ratio(const stable::StableParams& params, double kappa, const stable::QuadratureConfig& quad) {
  const double d = std::numbers::sqrt2 / 2.0;
  return ray_radius(params, kappa, d, d, quad) / ray_radius(params, kappa, 1.0, 0.0, quad);
}

double QuadraticObjective::operator()(double t1, double t2) const {
  const double d1 = t1 - target[0], d2 = t2 - target[1];
  return a[0] * d1 * d1 + (a[1] + a[2]) * d1 * d2 + a[3] * d2 * d2;
}

void QuadraticObjective::validate() const {
  for (double v : a)
    if (!std::isfinite(v)) throw InvalidParameter("objective.a: entries must be finite");
  if (!std::isfinite(target[0]) || !std::isfinite(target[1])) throw InvalidParameter("objective.target: must be finite");
  if (a[1] != a[2]) throw InvalidParameter("objective.a: matrix must be symmetric");
  if (!(a[0] > 0.0) || !(a[0] * a[3] - a[1] * a[2] > 0.0)) throw InvalidParameter("objective.a: matrix must be positive definite");
}

ToySolution toy_lse_solve(const QuadraticObjective& objective, const stable::StableParams& params, double kappa,
                          const stable::QuadratureConfig& quad, std::size_t scan_angles) {
  objective.validate();
  check_centered(params);
  if (scan_angles < 8) throw InvalidParameter("scan_angles: need at least 8");
  const double top = max_level(params, quad);
  if (kappa > top) {
    throw InfeasibleBudget("budget kappa = " + std::to_string(kappa) + " exceeds the maximum level " +
                           std::to_string(top) + "; no feasible point");
  }
  const double t1 = objective.target[0], t2 = objective.target[1];
  auto level = [&](double x, double y) { return stable::log_pdf(params, x, quad) + stable::log_pdf(params, y, quad); };
  if (level(t1, t2) >= kappa) return {t1, t2, 0.0, false};
  if (kappa == top) return {0.0, 0.0, objective(0.0, 0.0), true};

  auto boundary = [&](double phi) {
    const double c = std::cos(phi), s = std::sin(phi);
    const double r = ray_radius(params, kappa, c, s, quad);
    return std::array<double, 3>{r * c, r * s, objective(r * c, r * s)};
  };
  // multiples of 4 put the axis directions (the star tips) on the scan
  const std::size_t n = (scan_angles + 3) / 4 * 4;
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
  std::size_t best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::array<double, 3> best_pt{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = boundary(step * static_cast<double>(i));
    if (p[2] < best_val) {
      best_val = p[2];
      best = i;
      best_pt = p;
    }
  }
  double a = step * (static_cast<double>(best) - 1.0), b = step * (static_cast<double>(best) + 1.0);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  auto p1 = boundary(x1), p2 = boundary(x2);
  while (b - a > 1e-11) {
    if (p1[2] <= p2[2]) {
      b = x2;
      x2 = x1;
      p2 = p1;
      x1 = b - inv_phi * (b - a);
      p1 = boundary(x1);
    } else {
      a = x1;
      x1 = x2;
      p1 = p2;
      x2 = a + inv_phi * (b - a);
      p2 = boundary(x2);
    }
  }
  for (const auto& p : {p1, p2})
    if (p[2] < best_pt[2]) best_pt = p;
  return {best_pt[0], best_pt[1], best_pt[2], true};
}

// ---- CSV ---------------------------------------------------------------------------

void write_contour_csv(const GeometryContour& contour, std::ostream& out) {
  out << "angle,theta1,theta2,radius\n" << std::setprecision(17);
  for (const auto& p : contour.points) out << p.angle << ',' << p.theta1 << ',' << p.theta2 << ',' << p.radius << '\n';
}

void write_kde_csv(const KdeCurve& curve, std::ostream& out) {
  out << "grid,density\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.grid.size(); ++i) out << curve.grid[i] << ',' << curve.density[i] << '\n';
}

void write_prune_csv(std::span<const PrunePoint> points, std::ostream& out) {
  out << "fraction,pruned,accuracy\n" << std::setprecision(17);
  for (const auto& p : points) out << p.fraction << ',' << p.pruned << ',' << p.accuracy << '\n';
}

void write_sparsity_csv(const SparsityReport& report, std::ostream& out) {
  out << "layer,kind,count,below,fraction\n" << std::setprecision(17);
  for (const auto& l : report.layers) out << l.layer << ',' << l.kind << ',' << l.count << ',' << l.below << ',' << l.fraction << '\n';
  out << "all,all," << report.count << ',' << report.below << ',' << report.fraction << '\n';
}

}  // namespace softdiamond::analysis
