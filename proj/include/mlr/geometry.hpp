#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlr/array.hpp"

namespace mlr {

/// Simplified tilted-axis acquisition geometry. The object grid is
/// (n1, n0, n2); the detector stack is (n_theta, h, w). phi is the tilt of the
/// rotation axis; thetas are the projection angles.
struct Geometry {
  std::int64_t n1 = 0;
  std::int64_t n0 = 0;
  std::int64_t n2 = 0;
  std::int64_t n_theta = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  double phi = 0.0;
  std::vector<double> thetas;

  static Geometry make(std::int64_t n1, std::int64_t n0, std::int64_t n2, std::int64_t n_theta,
                       std::int64_t h, std::int64_t w, double phi);

  Shape3 volume_shape() const { return {n1, n0, n2}; }
  Shape3 mid_shape() const { return {n1, h, n2}; }  // after the 1D transform along axis 1
  Shape3 projection_shape() const { return {n_theta, h, w}; }

  /// Detector rows per object slice; h <= n0 so this is >= 1.
  double row_scaling() const { return static_cast<double>(n0) / static_cast<double>(h); }

  /// Throws std::invalid_argument on hard violations; returns warning strings
  /// for configurations that are legal but degenerate (for example
  /// phi = pi/2, which collapses every vertical frequency to zero).
  std::vector<std::string> validate() const;
};

///// Nonuniform frequency layout used by the transforms: one vertical frequency
/// per detector row and one in-plane frequency pair per (angle, column).
struct FrequencyGrids {
  std::vector<double> nu_z;            // h values
  std::vector<double> nu_x;            // n_theta*w values, row-major [t][q]
  std::vector<double> nu_y;            // n_theta*w values, row-major [t][q]

  double x(std::int64_t t, std::int64_t q, std::int64_t w) const { return nu_x[t * w + q]; }
  double y(std::int64_t t, std::int64_t q, std::int64_t w) const { return nu_y[t * w + q]; }
};

/// nu_z[k] = ((k - h/2)/h)*cos(phi);
/// nu_xy[t,q] = ((q - w/2)/w)*(cos theta_t, sin theta_t). Magnitudes <= 1/2.
FrequencyGrids frequency_grids(const Geometry& geom);

}  // namespace mlr
