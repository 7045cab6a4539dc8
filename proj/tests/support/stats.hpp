#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace stats {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct PairedTest {
  double mean_difference = 0.0;
  double t = 0.0;
  double p_greater = 0.5;  // one-sided p-value for H1: mean(a - b) > 0
  double p_less = 0.5;     // one-sided p-value for H1: mean(a - b) < 0
};

/// Paired t-test on a - b. A zero-variance difference gives p = 0 or 1 by sign.
inline PairedTest paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  PairedTest r;
  r.mean_difference = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean_difference) * (x - r.mean_difference);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.t = r.mean_difference > 0 ? INFINITY : (r.mean_difference < 0 ? -INFINITY : 0.0);
    r.p_greater = r.mean_difference > 0 ? 0.0 : (r.mean_difference < 0 ? 1.0 : 0.5);
    r.p_less = r.mean_difference < 0 ? 0.0 : (r.mean_difference > 0 ? 1.0 : 0.5);
    return r;
  }
  r.t = r.mean_difference / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  r.p_less = boost::math::cdf(dist, r.t);
  return r;
}

}  // namespace stats
