#include "mlr/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mlr {

Geometry Geometry::make(std::int64_t n1, std::int64_t n0, std::int64_t n2, std::int64_t n_theta,
                        std::int64_t h, std::int64_t w, double phi) {
  Geometry g;
  g.n1 = n1;
  g.n0 = n0;
  g.n2 = n2;
  g.n_theta = n_theta;
  g.h = h;
  g.w = w;
  g.phi = phi;
  g.thetas.resize(static_cast<std::size_t>(n_theta > 0 ? n_theta : 0));
  for (std::int64_t t = 0; t < n_theta; ++t)
    g.thetas[static_cast<std::size_t>(t)] =
        2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(n_theta);
  g.validate();
  return g;
}

std::vector<std::string> Geometry::validate() const {
  const double two_pi = 2.0 * std::numbers::pi;
  if (n1 < 2 || n0 < 2 || n2 < 2 || n_theta < 2 || h < 2 || w < 2)
    throw std::invalid_argument("Geometry: all extents must be >= 2");
  if (h > n0)
    throw std::invalid_argument("Geometry: detector rows h must not exceed n0");
  if (!(phi > 0.0) || phi > std::numbers::pi / 2.0)
    throw std::invalid_argument("Geometry: phi must lie in (0, pi/2]");
  if (static_cast<std::int64_t>(thetas.size()) != n_theta)
    throw std::invalid_argument("Geometry: thetas length must equal n_theta");
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    if (thetas[t] < 0.0 || thetas[t] >= two_pi)
      throw std::invalid_argument("Geometry: thetas must lie in [0, 2*pi)");
    if (t > 0 && thetas[t] <= thetas[t - 1])
      throw std::invalid_argument("Geometry: thetas must be strictly increasing");
  }

  std::vector<std::string> warnings;
  if (std::cos(phi) < 1e-12)
    warnings.push_back(
        "phi is at or near pi/2: every vertical frequency collapses to zero and "
        "the vertical transform degenerates to a row sum");
  return warnings;
}

FrequencyGrids frequency_grids(const Geometry& geom) {
  geom.validate();
  FrequencyGrids out;
  const double cphi = std::cos(geom.phi);
  out.nu_z.resize(static_cast<std::size_t>(geom.h));
  for (std::int64_t k = 0; k < geom.h; ++k)
    out.nu_z[static_cast<std::size_t>(k)] =
        (static_cast<double>(k) - static_cast<double>(geom.h) / 2.0) /
        static_cast<double>(geom.h) * cphi;

  out.nu_x.resize(static_cast<std::size_t>(geom.n_theta * geom.w));
  out.nu_y.resize(static_cast<std::size_t>(geom.n_theta * geom.w));
  for (std::int64_t t = 0; t < geom.n_theta; ++t) {
    const double ct = std::cos(geom.thetas[static_cast<std::size_t>(t)]);
    const double st = std::sin(geom.thetas[static_cast<std::size_t>(t)]);
    for (std::int64_t q = 0; q < geom.w; ++q) {
      const double radial = (static_cast<double>(q) - static_cast<double>(geom.w) / 2.0) /
                            static_cast<double>(geom.w);
      out.nu_x[static_cast<std::size_t>(t * geom.w + q)] = radial * ct;
      out.nu_y[static_cast<std::size_t>(t * geom.w + q)] = radial * st;
    }
  }
  return out;
}

}  // namespace mlr
