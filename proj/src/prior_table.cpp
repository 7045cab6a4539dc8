#include "softdiamond/prior_table.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "softdiamond/error.hpp"

namespace softdiamond::prior {

namespace {

constexpr char kMagic[] = "SDRT";
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 * 8 + 8 + 8;

void check_geometry(double epsilon, std::size_t n_grid) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidParameter("epsilon must be positive, got " + std::to_string(epsilon));
  }
  if (n_grid < 1) throw InvalidParameter("n_grid must be at least 1");
  if (n_grid > (std::size_t{1} << 40)) throw InvalidParameter("n_grid is unreasonably large");
}

}  // namespace

DerivTable::DerivTable(const stable::StableParams& params, double epsilon, std::size_t n_grid,
                       double c, std::vector<double> values)
    : params_(params),
      epsilon_(epsilon),
      n_grid_(static_cast<std::int64_t>(n_grid)),
      delta_(epsilon / static_cast<double>(n_grid)),
      c_(c),
      values_(std::move(values)) {
  check_geometry(epsilon, n_grid);
  if (!(c > 0.0) || !std::isfinite(c)) throw InvalidParameter("prior scale c must be finite and > 0");
  if (values_.size() != 2 * n_grid + 1) {
    throw InvalidParameter("expected " + std::to_string(2 * n_grid + 1) + " table values, got " +
                           std::to_string(values_.size()));
  }
  // delta is derived; it must reproduce epsilon up to rounding of one product.
  const double back = delta_ * static_cast<double>(n_grid);
  if (std::abs(back - epsilon) > 4.0 * std::numeric_limits<double>::epsilon() * epsilon) {
    throw InvalidParameter("delta * n_grid does not reproduce epsilon");
  }
}

DerivTable DerivTable::build(const stable::StableParams& params, double epsilon,
                             std::size_t n_grid, const stable::QuadratureConfig& quad,
                             double prior_scale_c) {
  if (params.beta() != 0.0) throw NonSymmetric("tables are only built for beta = 0");
  check_geometry(epsilon, n_grid);
  const auto n = static_cast<std::int64_t>(n_grid);
  const double delta = epsilon / static_cast<double>(n_grid);

  // Density on the shared grid j * delta, j = -N_g-1 .. N_g+1; every table
  // entry reuses its two neighbours.
  std::vector<double> density(static_cast<std::size_t>(2 * n + 3));
  auto at = [&](std::int64_t j) -> double& { return density[static_cast<std::size_t>(j + n + 1)]; };
  if (params.mu() == 0.0) {
    for (std::int64_t j = 0; j <= n + 1; ++j) {
      at(j) = stable::pdf(params, static_cast<double>(j) * delta, quad);
      at(-j) = at(j);
    }
  } else {
    for (std::int64_t j = -n - 1; j <= n + 1; ++j) {
      at(j) = stable::pdf(params, static_cast<double>(j) * delta, quad);
    }
  }

  std::vector<double> values(static_cast<std::size_t>(2 * n + 1));
  for (std::int64_t k = -n; k <= n; ++k) {
    const double p = at(k);
    if (!(p > 0.0)) {
      throw DegenerateDensity("density underflows at theta=" +
                              std::to_string(static_cast<double>(k) * delta));
    }
    values[static_cast<std::size_t>(k + n)] = (at(k + 1) - at(k - 1)) / (2.0 * delta * p);
  }
  return DerivTable(params, epsilon, n_grid, prior_scale_c, std::move(values));
}

DerivTable DerivTable::from_values(const stable::StableParams& params, double epsilon,
                                   std::size_t n_grid, std::vector<double> values,
                                   double prior_scale_c) {
  return DerivTable(params, epsilon, n_grid, prior_scale_c, std::move(values));
}

std::int64_t DerivTable::key_of(double theta) const noexcept {
  if (std::isnan(theta)) return 0;
  double q = std::floor(theta / delta_);
  // The division can round across a cell edge; settle against the grid points as represented.
  if (std::isfinite(q)) {
    if ((q + 1.0) * delta_ <= theta) q += 1.0;
    else if (q * delta_ > theta) q -= 1.0;
  }
  const auto bound = static_cast<double>(n_grid_);
  if (q >= bound) return n_grid_;
  if (q <= -bound) return -n_grid_;
  return static_cast<std::int64_t>(q);
}

DerivTable DerivTable::with_scale(double prior_scale_c) const {
  return DerivTable(params_, epsilon_, static_cast<std::size_t>(n_grid_), prior_scale_c, values_);
}

TableHeader DerivTable::header() const {
  return TableHeader{kTableFormatVersion, params_, epsilon_, static_cast<std::uint64_t>(n_grid_), c_};
}

io::Bytes DerivTable::serialize() const {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kTableFormatVersion);
  w.f64(params_.alpha());
  w.f64(params_.gamma());
  w.f64(params_.mu());
  w.f64(epsilon_);
  w.u64(static_cast<std::uint64_t>(n_grid_));
  w.f64(c_);
  w.f64s(values_);
  w.seal();
  return std::move(w).take();
}

TableHeader DerivTable::read_header(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.raw(4) != std::string_view(kMagic, 4)) throw FormatError("BadMagic", "not a table file");
  TableHeader h;
  h.version = r.u32();
  if (h.version != kTableFormatVersion) {
    throw VersionMismatch("table format version " + std::to_string(h.version) + ", expected " +
                          std::to_string(kTableFormatVersion));
  }
  const double alpha = r.f64();
  const double gamma = r.f64();
  const double mu = r.f64();
  h.params = stable::StableParams::symmetric(alpha, gamma, mu);
  h.epsilon = r.f64();
  h.n_grid = r.u64();
  h.prior_scale_c = r.f64();
  return h;
}

TableHeader DerivTable::read_header_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("FileNotFound", "cannot open " + path);
  io::Bytes head(kHeaderBytes);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return read_header(head);
}

DerivTable DerivTable::deserialize(std::span<const std::uint8_t> bytes) {
  const auto payload = io::verify_sealed(bytes);
  const TableHeader h = read_header(payload);
  io::ByteReader r(payload);
  r.raw(kHeaderBytes);
  if (h.n_grid > (r.remaining() / sizeof(double))) {
    throw FormatError("Truncated", "table values are incomplete");
  }
  auto values = r.f64s(2 * h.n_grid + 1);
  if (r.remaining() != 0) throw FormatError("TrailingBytes", "unexpected bytes after table values");
  return DerivTable(h.params, h.epsilon, h.n_grid, h.prior_scale_c, std::move(values));
}

std::uint32_t DerivTable::checksum() const {
  const io::Bytes bytes = serialize();
  std::uint32_t crc = 0;
  std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
  return crc;
}

bool DerivTable::operator==(const DerivTable& o) const {
  return params_ == o.params_ && epsilon_ == o.epsilon_ && n_grid_ == o.n_grid_ &&
         delta_ == o.delta_ && c_ == o.c_ && values_ == o.values_;
}

}  // namespace softdiamond::prior
