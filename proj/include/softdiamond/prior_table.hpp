#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softdiamond/binary_io.hpp"
#include "softdiamond/stable_density.hpp"

namespace softdiamond::prior {

inline constexpr double kDefaultEpsilon = 0.8;
inline constexpr std::size_t kDefaultGridCount = 400;  // delta = 0.002
inline constexpr std::uint32_t kTableFormatVersion = 1;

/// Metadata stored in front of a serialized table.
struct TableHeader {
  std::uint32_t version = kTableFormatVersion;
  stable::StableParams params = stable::StableParams::symmetric(1.0, 1.0);
  double epsilon = kDefaultEpsilon;
  std::uint64_t n_grid = kDefaultGridCount;
  double prior_scale_c = 1.0;
};

/// Lookup table of d/dtheta ln h(theta) sampled on the grid theta_k = k * delta,
/// k = -N_g..N_g, delta = epsilon / N_g. Queries quantize theta with floor and
/// saturate at the boundary keys; the prior coefficient c is applied at query
/// time so one table serves a sweep over c.
class DerivTable {
 public:
  /// Central differences of the density itself divided by the density:
  /// values[k] = (p(theta_k + delta) - p(theta_k - delta)) / (2 delta p(theta_k)).
  static DerivTable build(const stable::StableParams& params, double epsilon, std::size_t n_grid,
                          const stable::QuadratureConfig& quad = {}, double prior_scale_c = 1.0);

  /// Table with caller-supplied values (2 * n_grid + 1 of them, key -N_g first).
  static DerivTable from_values(const stable::StableParams& params, double epsilon,
                                std::size_t n_grid, std::vector<double> values,
                                double prior_scale_c = 1.0);

  const stable::StableParams& params() const noexcept { return params_; }
  double epsilon() const noexcept { return epsilon_; }
  std::int64_t n_grid() const noexcept { return n_grid_; }
  double delta() const noexcept { return delta_; }
  double prior_scale_c() const noexcept { return c_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Table value (without c) for key in [-N_g, N_g].
  double value_at(std::int64_t key) const { return values_.at(static_cast<std::size_t>(key + n_grid_)); }
  double grid_point(std::int64_t key) const noexcept { return static_cast<double>(key) * delta_; }

  std::int64_t key_of(double theta) const noexcept;
  bool saturates(double theta) const noexcept {
    const std::int64_t k = key_of(theta);
    return k == n_grid_ || k == -n_grid_;
  }
  double lookup_grad(double theta) const noexcept {
    return c_ * values_[static_cast<std::size_t>(key_of(theta) + n_grid_)];
  }

  DerivTable with_scale(double prior_scale_c) const;
  TableHeader header() const;

  io::Bytes serialize() const;
  static DerivTable deserialize(std::span<const std::uint8_t> bytes);
  /// Reads only the fixed-size header; values are not touched.
  static TableHeader read_header(std::span<const std::uint8_t> bytes);
  static TableHeader read_header_file(const std::string& path);

  /// CRC-32 of the serialized form.
  std::uint32_t checksum() const;

  bool operator==(const DerivTable& other) const;

 private:
  DerivTable(const stable::StableParams& params, double epsilon, std::size_t n_grid, double c,
             std::vector<double> values);

  stable::StableParams params_;
  double epsilon_;
  std::int64_t n_grid_;
  double delta_;
  double c_;
  std::vector<double> values_;
};

}  // namespace softdiamond::prior
