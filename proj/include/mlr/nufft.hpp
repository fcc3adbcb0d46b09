#pragma once

#include "mlr/array.hpp"
#include "mlr/geometry.hpp"

namespace mlr::nufft {

/// Gaussian-gridding evaluation of the nonuniform transforms: deconvolved
/// modes -> oversampled FFT -> truncated Gaussian interpolation at the
/// nonuniform targets (and the reverse spreading for the adjoints).
/// Matches the direct-summation path to ~1e-9 relative at desk scales.
Volume fu1d_gridding(const Volume& u, const Geometry& geom);
Volume fu1d_adj_gridding(const Volume& v, const Geometry& geom);
ProjectionSet fu2d_gridding(const Volume& v, const Geometry& geom);
Volume fu2d_adj_gridding(const ProjectionSet& p, const Geometry& geom);

}  // namespace mlr::nufft
