#pragma once

#include <array>

#include "mlr/array.hpp"
#include "mlr/geometry.hpp"

namespace mlr {

/// Selects how the nonuniform transforms are evaluated. Both paths satisfy
/// the same contract; `direct` is the exact-summation reference, `gridding`
/// is the oversampled-FFT approximation (accurate to ~1e-9 relative).
enum class NudftPath { direct, gridding };

/// Forward differences of a volume along each axis, replicate boundary
/// (the difference across the last face is zero).
struct GradField {
  std::array<Array3, 3> comp;

  static GradField zeros(Shape3 shape, Domain domain = Domain::space);
  Shape3 shape() const { return comp[0].shape(); }
  bool all_finite() const;
};

// Elementwise helpers over all three components.
double norm2(const GradField& g);
cplx gdot(const GradField& a, const GradField& b);  // sum over components of vdot
GradField add(const GradField& a, const GradField& b);
GradField sub(const GradField& a, const GradField& b);
GradField scaled(const GradField& a, cplx alpha);

/// Per-angle centered orthonormal 2D DFT over the detector plane (d1, d2).
/// f2d maps space -> frequency; f2d_adj is its exact inverse (unitary).
ProjectionSet f2d(const ProjectionSet& p);
ProjectionSet f2d_adj(const ProjectionSet& p);

/// Vertical nonuniform transform: out[i,k,j] = sum_m u[i,m,j] e^{-2pi i nu_z[k] m}.
/// Accepts slabs along axis 0 (d0 may be smaller than n1).
Volume fu1d(const Volume& u, const Geometry& geom, NudftPath path = NudftPath::direct);
Volume fu1d_adj(const Volume& v, const Geometry& geom, NudftPath path = NudftPath::direct);

/// In-plane nonuniform transform per detector row k:
/// out[t,k,q] = sum_{i,j} v[i,k,j] e^{-2pi i (nu_x(t,q) i + nu_y(t,q) j)}.
/// Accepts slabs along axis 1 (d1 may be smaller than h).
ProjectionSet fu2d(const Volume& v, const Geometry& geom, NudftPath path = NudftPath::direct);
Volume fu2d_adj(const ProjectionSet& p, const Geometry& geom,
                NudftPath path = NudftPath::direct);

/// fu2d(v) - d_hat evaluated in one pass. Bit-identical to the two-step
/// computation with the same summation order.
ProjectionSet fused_sub_fu2d(const Volume& v, const ProjectionSet& d_hat, const Geometry& geom,
                             NudftPath path = NudftPath::direct);

/// Full projector L = f2d_adj . fu2d . fu1d and its adjoint.
ProjectionSet forward_L(const Volume& u, const Geometry& geom,
                        NudftPath path = NudftPath::direct);
Volume adjoint_L(const ProjectionSet& d, const Geometry& geom,
                 NudftPath path = NudftPath::direct);

GradField grad(const Array3& u);

/// Exact negative adjoint of grad: <grad(u), g> = -<u, div(g)>.
Array3 div(const GradField& g);

}  // namespace mlr
