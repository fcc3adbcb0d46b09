#include "mlr/operators.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "mlr/nufft.hpp"

namespace mlr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Centered unitary DFT matrix of size N, row-major:
/// W[k,m] = exp(-2pi i (k - N/2)(m - N/2)/N) / sqrt(N). Symmetric in (k, m),
/// so the adjoint pass is the elementwise conjugate.
std::shared_ptr<const std::vector<cplx>> dft_matrix(std::int64_t n) {
  static std::mutex mx;
  static std::map<std::int64_t, std::shared_ptr<const std::vector<cplx>>> cache;
  std::lock_guard<std::mutex> lock(mx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  auto mat = std::make_shared<std::vector<cplx>>(static_cast<std::size_t>(n * n));
  const double c = static_cast<double>(n) / 2.0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::int64_t k = 0; k < n; ++k)
    for (std::int64_t m = 0; m < n; ++m)
      (*mat)[static_cast<std::size_t>(k * n + m)] =
          std::polar(scale, -kTwoPi * (static_cast<double>(k) - c) *
                                (static_cast<double>(m) - c) / static_cast<double>(n));
  cache.emplace(n, mat);
  return mat;
}

ProjectionSet f2d_core(const ProjectionSet& p, bool adjoint) {
  const Shape3 s = p.shape();
  auto wh = dft_matrix(s.d1);
  auto ww = dft_matrix(s.d2);

  ProjectionSet out(s, adjoint ? Domain::space : Domain::frequency);
  std::vector<cplx> tmp(static_cast<std::size_t>(s.d1 * s.d2));
  for (std::int64_t t = 0; t < s.d0; ++t) {
    const cplx* in = p.data() + t * s.d1 * s.d2;
    std::fill(tmp.begin(), tmp.end(), cplx{0.0, 0.0});
    for (std::int64_t k = 0; k < s.d1; ++k) {
      cplx* trow = tmp.data() + k * s.d2;
      for (std::int64_t m = 0; m < s.d1; ++m) {
        cplx c = (*wh)[static_cast<std::size_t>(k * s.d1 + m)];
        if (adjoint) c = std::conj(c);
        const cplx* irow = in + m * s.d2;
        for (std::int64_t n = 0; n < s.d2; ++n) trow[n] += irow[n] * c;
      }
    }
    cplx* orow = out.data() + t * s.d1 * s.d2;
    for (std::int64_t k = 0; k < s.d1; ++k) {
      const cplx* trow = tmp.data() + k * s.d2;
      for (std::int64_t l = 0; l < s.d2; ++l) {
        const cplx* wrow = ww->data() + l * s.d2;
        cplx acc{0.0, 0.0};
        if (adjoint) {
          for (std::int64_t n = 0; n < s.d2; ++n) acc += trow[n] * std::conj(wrow[n]);
        } else {
          for (std::int64_t n = 0; n < s.d2; ++n) acc += trow[n] * wrow[n];
        }
        orow[k * s.d2 + l] = acc;
      }
    }
  }
  return out;
}

/// Phase table P[k,m] = exp(-2pi i nu_z[k] m), shared by fu1d and its adjoint.
std::vector<cplx> vertical_phase_table(const Geometry& geom, const FrequencyGrids& fg) {
  std::vector<cplx> table(static_cast<std::size_t>(geom.h * geom.n0));
  for (std::int64_t k = 0; k < geom.h; ++k)
    for (std::int64_t m = 0; m < geom.n0; ++m)
      table[static_cast<std::size_t>(k * geom.n0 + m)] =
          std::polar(1.0, -kTwoPi * fg.nu_z[static_cast<std::size_t>(k)] *
                              static_cast<double>(m));
  return table;
}

Volume fu1d_direct(const Volume& u, const Geometry& geom) {
  const Shape3 s = u.shape();
  const FrequencyGrids fg = frequency_grids(geom);
  const std::vector<cplx> phase = vertical_phase_table(geom, fg);

  Volume out({s.d0, geom.h, s.d2}, u.domain());
  for (std::int64_t i = 0; i < s.d0; ++i) {
    const cplx* slab = u.data() + i * s.d1 * s.d2;
    cplx* oslab = out.data() + i * geom.h * s.d2;
    for (std::int64_t k = 0; k < geom.h; ++k) {
      cplx* orow = oslab + k * s.d2;
      for (std::int64_t m = 0; m < s.d1; ++m) {
        const cplx c = phase[static_cast<std::size_t>(k * geom.n0 + m)];
        const cplx* irow = slab + m * s.d2;
        for (std::int64_t j = 0; j < s.d2; ++j) orow[j] += irow[j] * c;
      }
    }
  }
  return out;
}

Volume fu1d_adj_direct(const Volume& v, const Geometry& geom) {
  const Shape3 s = v.shape();
  const FrequencyGrids fg = frequency_grids(geom);
  const std::vector<cplx> phase = vertical_phase_table(geom, fg);

  Volume out({s.d0, geom.n0, s.d2}, v.domain());
  for (std::int64_t i = 0; i < s.d0; ++i) {
    const cplx* slab = v.data() + i * geom.h * s.d2;
    cplx* oslab = out.data() + i * geom.n0 * s.d2;
    for (std::int64_t m = 0; m < geom.n0; ++m) {
      cplx* orow = oslab + m * s.d2;
      for (std::int64_t k = 0; k < geom.h; ++k) {
        const cplx c = std::conj(phase[static_cast<std::size_t>(k * geom.n0 + m)]);
        const cplx* irow = slab + k * s.d2;
        for (std::int64_t j = 0; j < s.d2; ++j) orow[j] += irow[j] * c;
      }
    }
  }
  return out;
}

/// Shared core for fu2d and the fused subtraction: writes
/// out[t,k,q] = sum_{i,j} v[i,k,j] px(t,q,i) py(t,q,j) - (sub ? sub[t,k,q] : 0).
/// Summation order per output element is j ascending inside i ascending, so
/// results are independent of how the k axis is chunked.
ProjectionSet fu2d_core(const Volume& v, const Geometry& geom, const ProjectionSet* sub) {
  const Shape3 s = v.shape();  // (n1, k-slab, n2)
  const FrequencyGrids fg = frequency_grids(geom);

  ProjectionSet out({geom.n_theta, s.d1, geom.w}, Domain::frequency);
  std::vector<cplx> px(static_cast<std::size_t>(s.d0));
  std::vector<cplx> py(static_cast<std::size_t>(s.d2));
  std::vector<cplx> partial(static_cast<std::size_t>(s.d0 * s.d1));

  for (std::int64_t t = 0; t < geom.n_theta; ++t) {
    for (std::int64_t q = 0; q < geom.w; ++q) {
      const double fx = fg.x(t, q, geom.w);
      const double fy = fg.y(t, q, geom.w);
      for (std::int64_t i = 0; i < s.d0; ++i)
        px[static_cast<std::size_t>(i)] = std::polar(1.0, -kTwoPi * fx * static_cast<double>(i));
      for (std::int64_t j = 0; j < s.d2; ++j)
        py[static_cast<std::size_t>(j)] = std::polar(1.0, -kTwoPi * fy * static_cast<double>(j));

      for (std::int64_t i = 0; i < s.d0; ++i)
        for (std::int64_t k = 0; k < s.d1; ++k) {
          const cplx* irow = v.data() + (i * s.d1 + k) * s.d2;
          cplx acc{0.0, 0.0};
          for (std::int64_t j = 0; j < s.d2; ++j) acc += irow[j] * py[static_cast<std::size_t>(j)];
          partial[static_cast<std::size_t>(i * s.d1 + k)] = acc;
        }

      for (std::int64_t k = 0; k < s.d1; ++k) {
        cplx acc{0.0, 0.0};
        for (std::int64_t i = 0; i < s.d0; ++i)
          acc += px[static_cast<std::size_t>(i)] * partial[static_cast<std::size_t>(i * s.d1 + k)];
        if (sub) acc -= sub->at(t, k, q);
        out.at(t, k, q) = acc;
      }
    }
  }
  return out;
}

Volume fu2d_adj_direct(const ProjectionSet& p, const Geometry& geom) {
  const Shape3 s = p.shape();  // (n_theta, k-slab, w)
  const FrequencyGrids fg = frequency_grids(geom);

  Volume out({geom.n1, s.d1, geom.n2}, Domain::space);
  std::vector<cplx> px(static_cast<std::size_t>(geom.n1));
  std::vector<cplx> py(static_cast<std::size_t>(geom.n2));

  for (std::int64_t t = 0; t < geom.n_theta; ++t) {
    for (std::int64_t q = 0; q < geom.w; ++q) {
      const double fx = fg.x(t, q, geom.w);
      const double fy = fg.y(t, q, geom.w);
      for (std::int64_t i = 0; i < geom.n1; ++i)
        px[static_cast<std::size_t>(i)] = std::polar(1.0, kTwoPi * fx * static_cast<double>(i));
      for (std::int64_t j = 0; j < geom.n2; ++j)
        py[static_cast<std::size_t>(j)] = std::polar(1.0, kTwoPi * fy * static_cast<double>(j));

      for (std::int64_t k = 0; k < s.d1; ++k) {
        const cplx c = p.at(t, k, q);
        for (std::int64_t i = 0; i < geom.n1; ++i) {
          const cplx ci = c * px[static_cast<std::size_t>(i)];
          cplx* orow = out.data() + (i * s.d1 + k) * geom.n2;
          for (std::int64_t j = 0; j < geom.n2; ++j)
            orow[j] += ci * py[static_cast<std::size_t>(j)];
        }
      }
    }
  }
  return out;
}

void check_axes(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("operator shape mismatch: ") + what);
}

}  // namespace

GradField GradField::zeros(Shape3 shape, Domain domain) {
  GradField g;
  for (auto& c : g.comp) c = Array3(shape, domain);
  return g;
}

bool GradField::all_finite() const {
  return comp[0].all_finite() && comp[1].all_finite() && comp[2].all_finite();
}

double norm2(const GradField& g) {
  double acc = 0.0;
  for (const auto& c : g.comp)
    for (const cplx& v : c.flat()) acc += std::norm(v);
  return std::sqrt(acc);
}

cplx gdot(const GradField& a, const GradField& b) {
  cplx acc(0.0, 0.0);
  for (int ax = 0; ax < 3; ++ax) acc += vdot(a.comp[ax], b.comp[ax]);
  return acc;
}

GradField add(const GradField& a, const GradField& b) {
  GradField out;
  for (int ax = 0; ax < 3; ++ax) out.comp[ax] = add(a.comp[ax], b.comp[ax]);
  return out;
}

GradField sub(const GradField& a, const GradField& b) {
  GradField out;
  for (int ax = 0; ax < 3; ++ax) out.comp[ax] = sub(a.comp[ax], b.comp[ax]);
  return out;
}

GradField scaled(const GradField& a, cplx alpha) {
  GradField out;
  for (int ax = 0; ax < 3; ++ax) out.comp[ax] = scaled(a.comp[ax], alpha);
  return out;
}

ProjectionSet f2d(const ProjectionSet& p) {
  if (p.domain() != Domain::space)
    throw std::invalid_argument("f2d: input must be in the space domain");
  return f2d_core(p, false);
}

ProjectionSet f2d_adj(const ProjectionSet& p) {
  if (p.domain() != Domain::frequency)
    throw std::invalid_argument("f2d_adj: input must be in the frequency domain");
  return f2d_core(p, true);
}

Volume fu1d(const Volume& u, const Geometry& geom, NudftPath path) {
  check_axes(u.shape().d1 == geom.n0 && u.shape().d2 == geom.n2 && u.shape().d0 >= 1,
             "fu1d expects (slab, n0, n2)");
  return path == NudftPath::direct ? fu1d_direct(u, geom) : nufft::fu1d_gridding(u, geom);
}

Volume fu1d_adj(const Volume& v, const Geometry& geom, NudftPath path) {
  check_axes(v.shape().d1 == geom.h && v.shape().d2 == geom.n2 && v.shape().d0 >= 1,
             "fu1d_adj expects (slab, h, n2)");
  return path == NudftPath::direct ? fu1d_adj_direct(v, geom) : nufft::fu1d_adj_gridding(v, geom);
}

ProjectionSet fu2d(const Volume& v, const Geometry& geom, NudftPath path) {
  check_axes(v.shape().d0 == geom.n1 && v.shape().d2 == geom.n2 && v.shape().d1 >= 1,
             "fu2d expects (n1, slab, n2)");
  return path == NudftPath::direct ? fu2d_core(v, geom, nullptr) : nufft::fu2d_gridding(v, geom);
}

Volume fu2d_adj(const ProjectionSet& p, const Geometry& geom, NudftPath path) {
  check_axes(p.shape().d0 == geom.n_theta && p.shape().d2 == geom.w && p.shape().d1 >= 1,
             "fu2d_adj expects (n_theta, slab, w)");
  return path == NudftPath::direct ? fu2d_adj_direct(p, geom) : nufft::fu2d_adj_gridding(p, geom);
}

ProjectionSet fused_sub_fu2d(const Volume& v, const ProjectionSet& d_hat, const Geometry& geom,
                             NudftPath path) {
  check_axes(v.shape().d0 == geom.n1 && v.shape().d2 == geom.n2, "fused_sub_fu2d input");
  check_axes(d_hat.shape().d0 == geom.n_theta && d_hat.shape().d1 == v.shape().d1 &&
                 d_hat.shape().d2 == geom.w,
             "fused_sub_fu2d: d_hat shape must match the transform output");
  if (d_hat.domain() != Domain::frequency)
    throw std::invalid_argument("fused_sub_fu2d: d_hat must be in the frequency domain");
  if (path == NudftPath::direct) return fu2d_core(v, geom, &d_hat);
  ProjectionSet out = nufft::fu2d_gridding(v, geom);
  const cplx* ps = d_hat.data();
  cplx* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] -= ps[i];
  return out;
}

ProjectionSet forward_L(const Volume& u, const Geometry& geom, NudftPath path) {
  check_axes(u.shape() == geom.volume_shape(), "forward_L expects the full volume");
  return f2d_adj(fu2d(fu1d(u, geom, path), geom, path));
}

Volume adjoint_L(const ProjectionSet& d, const Geometry& geom, NudftPath path) {
  check_axes(d.shape() == geom.projection_shape(), "adjoint_L expects the full projection set");
  return fu1d_adj(fu2d_adj(f2d(d), geom, path), geom, path);
}

GradField grad(const Array3& u) {
  const Shape3 s = u.shape();
  GradField g = GradField::zeros(s, u.domain());
  const std::int64_t strides[3] = {s.d1 * s.d2, s.d2, 1};
  for (int ax = 0; ax < 3; ++ax) {
    const std::int64_t len = s.extent(ax);
    cplx* go = g.comp[ax].data();
    const cplx* pu = u.data();
    for (std::int64_t i = 0; i < s.d0; ++i)
      for (std::int64_t j = 0; j < s.d1; ++j)
        for (std::int64_t k = 0; k < s.d2; ++k) {
          const std::int64_t pos = (ax == 0 ? i : ax == 1 ? j : k);
          const std::int64_t idx = (i * s.d1 + j) * s.d2 + k;
          go[idx] = (pos + 1 < len) ? pu[idx + strides[ax]] - pu[idx] : cplx{0.0, 0.0};
        }
  }
  return g;
}

Array3 div(const GradField& g) {
  const Shape3 s = g.comp[0].shape();
  if (!(g.comp[1].shape() == s) || !(g.comp[2].shape() == s))
    throw std::invalid_argument("div: component shapes differ");
  Array3 out(s, g.comp[0].domain());
  const std::int64_t strides[3] = {s.d1 * s.d2, s.d2, 1};
  cplx* po = out.data();
  for (int ax = 0; ax < 3; ++ax) {
    const std::int64_t len = s.extent(ax);
    const cplx* pg = g.comp[ax].data();
    for (std::int64_t i = 0; i < s.d0; ++i)
      for (std::int64_t j = 0; j < s.d1; ++j)
        for (std::int64_t k = 0; k < s.d2; ++k) {
          const std::int64_t pos = (ax == 0 ? i : ax == 1 ? j : k);
          const std::int64_t idx = (i * s.d1 + j) * s.d2 + k;
          cplx val{0.0, 0.0};
          if (pos + 1 < len) val += pg[idx];          // own forward difference
          if (pos > 0) val -= pg[idx - strides[ax]];  // neighbour's difference
          po[idx] += val;
        }
  }
  return out;
}

}  // namespace mlr
