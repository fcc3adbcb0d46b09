#include "mlr/nufft.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace mlr::nufft {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSpread = 12;  // grid points on each side of a target

std::int64_t next_pow2(std::int64_t n) {
  std::int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// In-place radix-2 FFT, unnormalized: X[k] = sum_n x[n] e^{sign 2pi i nk/N}.
void fft(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = static_cast<double>(sign) * kTwoPi / static_cast<double>(len);
    const cplx wstep = std::polar(1.0, ang);
    for (std::size_t i = 0; i < n; i += len) {
      cplx w{1.0, 0.0};
      for (std::size_t j = 0; j < len / 2; ++j) {
        const cplx u = a[i + j];
        const cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wstep;
      }
    }
  }
}

/// One transform dimension: n uniform modes and a fixed nonuniform target
/// set. Precomputes the oversampled grid size, the Gaussian spreading
/// windows per target and the mode deconvolution factors.
struct DimPlan {
  std::int64_t n = 0;       // mode count
  std::int64_t center = 0;  // floor(n/2)
  std::int64_t m = 0;       // oversampled grid size (power of two)
  double tau = 0.0;
  double pref = 0.0;                 // (2pi/m)/sqrt(4 pi tau)
  std::vector<double> deconv;        // e^{(idx-center)^2 tau}, indexed by mode
  std::vector<std::int32_t> gidx;    // per target: 2*kSpread wrapped grid indices
  std::vector<double> gwts;          // per target: matching Gaussian weights
  std::vector<double> target_freq;   // nu per target (for the centering phase)

  static DimPlan make(std::int64_t n_modes, const std::vector<double>& freqs) {
    DimPlan d;
    d.n = n_modes;
    d.center = n_modes / 2;
    d.m = std::max<std::int64_t>(next_pow2(2 * n_modes), 2 * kSpread);
    const double sigma = static_cast<double>(d.m) / static_cast<double>(n_modes);
    d.tau = std::numbers::pi * kSpread /
            (static_cast<double>(n_modes * n_modes) * sigma * (sigma - 0.5));
    d.pref = (kTwoPi / static_cast<double>(d.m)) / std::sqrt(4.0 * std::numbers::pi * d.tau);

    d.deconv.resize(static_cast<std::size_t>(d.n));
    for (std::int64_t i = 0; i < d.n; ++i) {
      const double mm = static_cast<double>(i - d.center);
      d.deconv[static_cast<std::size_t>(i)] = std::exp(mm * mm * d.tau);
    }

    const double delta = kTwoPi / static_cast<double>(d.m);
    d.gidx.resize(freqs.size() * 2 * kSpread);
    d.gwts.resize(freqs.size() * 2 * kSpread);
    d.target_freq = freqs;
    for (std::size_t k = 0; k < freqs.size(); ++k) {
      double x = std::fmod(-kTwoPi * freqs[k], kTwoPi);
      if (x < 0.0) x += kTwoPi;
      const std::int64_t l0 = static_cast<std::int64_t>(std::floor(x / delta)) - kSpread + 1;
      for (int a = 0; a < 2 * kSpread; ++a) {
        const std::int64_t l = l0 + a;
        const double dist = x - static_cast<double>(l) * delta;
        std::int64_t wrapped = l % d.m;
        if (wrapped < 0) wrapped += d.m;
        d.gidx[k * 2 * kSpread + static_cast<std::size_t>(a)] =
            static_cast<std::int32_t>(wrapped);
        d.gwts[k * 2 * kSpread + static_cast<std::size_t>(a)] =
            std::exp(-dist * dist / (4.0 * d.tau));
      }
    }
    return d;
  }

  /// e^{-2pi i nu center}: the phase factor from shifting modes to a
  /// symmetric index range. Conjugated for the adjoint direction.
  cplx center_phase(std::size_t target, int sign) const {
    return std::polar(1.0, static_cast<double>(sign) * -kTwoPi * target_freq[target] *
                               static_cast<double>(center));
  }
};

}  // namespace

Volume fu1d_gridding(const Volume& u, const Geometry& geom) {
  const Shape3 s = u.shape();
  const FrequencyGrids fg = frequency_grids(geom);
  const DimPlan dp = DimPlan::make(geom.n0, fg.nu_z);

  Volume out({s.d0, geom.h, s.d2}, u.domain());
  std::vector<cplx> grid(static_cast<std::size_t>(dp.m));
  for (std::int64_t i = 0; i < s.d0; ++i)
    for (std::int64_t j = 0; j < s.d2; ++j) {
      std::fill(grid.begin(), grid.end(), cplx{0.0, 0.0});
      for (std::int64_t mm = 0; mm < s.d1; ++mm) {
        std::int64_t w = (mm - dp.center) % dp.m;
        if (w < 0) w += dp.m;
        grid[static_cast<std::size_t>(w)] =
            u.at(i, mm, j) * dp.deconv[static_cast<std::size_t>(mm)];
      }
      fft(grid, +1);
      for (std::int64_t k = 0; k < geom.h; ++k) {
        cplx acc{0.0, 0.0};
        const std::size_t base = static_cast<std::size_t>(k) * 2 * kSpread;
        for (int a = 0; a < 2 * kSpread; ++a)
          acc += grid[static_cast<std::size_t>(dp.gidx[base + static_cast<std::size_t>(a)])] *
                 dp.gwts[base + static_cast<std::size_t>(a)];
        out.at(i, k, j) = acc * dp.pref * dp.center_phase(static_cast<std::size_t>(k), +1);
      }
    }
  return out;
}

Volume fu1d_adj_gridding(const Volume& v, const Geometry& geom) {
  const Shape3 s = v.shape();
  const FrequencyGrids fg = frequency_grids(geom);
  const DimPlan dp = DimPlan::make(geom.n0, fg.nu_z);

  Volume out({s.d0, geom.n0, s.d2}, v.domain());
  std::vector<cplx> grid(static_cast<std::size_t>(dp.m));
  for (std::int64_t i = 0; i < s.d0; ++i)
    for (std::int64_t j = 0; j < s.d2; ++j) {
      std::fill(grid.begin(), grid.end(), cplx{0.0, 0.0});
      for (std::int64_t k = 0; k < geom.h; ++k) {
        const cplx c = v.at(i, k, j) * dp.center_phase(static_cast<std::size_t>(k), -1);
        const std::size_t base = static_cast<std::size_t>(k) * 2 * kSpread;
        for (int a = 0; a < 2 * kSpread; ++a)
          grid[static_cast<std::size_t>(dp.gidx[base + static_cast<std::size_t>(a)])] +=
              c * dp.gwts[base + static_cast<std::size_t>(a)];
      }
      fft(grid, -1);
      for (std::int64_t mm = 0; mm < geom.n0; ++mm) {
        std::int64_t w = (mm - dp.center) % dp.m;
        if (w < 0) w += dp.m;
        out.at(i, mm, j) = grid[static_cast<std::size_t>(w)] * dp.pref *
                           dp.deconv[static_cast<std::size_t>(mm)];
      }
    }
  return out;
}

namespace {

void fft2_inplace(std::vector<cplx>& g, std::int64_t m1, std::int64_t m2, int sign) {
  std::vector<cplx> row(static_cast<std::size_t>(m2));
  for (std::int64_t i = 0; i < m1; ++i) {
    std::copy_n(g.begin() + i * m2, m2, row.begin());
    fft(row, sign);
    std::copy_n(row.begin(), m2, g.begin() + i * m2);
  }
  std::vector<cplx> col(static_cast<std::size_t>(m1));
  for (std::int64_t j = 0; j < m2; ++j) {
    for (std::int64_t i = 0; i < m1; ++i) col[static_cast<std::size_t>(i)] = g[i * m2 + j];
    fft(col, sign);
    for (std::int64_t i = 0; i < m1; ++i) g[i * m2 + j] = col[static_cast<std::size_t>(i)];
  }
}

}  // namespace

ProjectionSet fu2d_gridding(const Volume& v, const Geometry& geom) {
  const Shape3 s = v.shape();  // (n1, k-slab, n2)
  const FrequencyGrids fg = frequency_grids(geom);
  const DimPlan d1 = DimPlan::make(geom.n1, fg.nu_x);
  const DimPlan d2 = DimPlan::make(geom.n2, fg.nu_y);
  const std::size_t n_targets = fg.nu_x.size();

  ProjectionSet out({geom.n_theta, s.d1, geom.w}, Domain::frequency);
  std::vector<cplx> grid(static_cast<std::size_t>(d1.m * d2.m));
  for (std::int64_t k = 0; k < s.d1; ++k) {
    std::fill(grid.begin(), grid.end(), cplx{0.0, 0.0});
    for (std::int64_t i = 0; i < s.d0; ++i) {
      std::int64_t wi = (i - d1.center) % d1.m;
      if (wi < 0) wi += d1.m;
      for (std::int64_t j = 0; j < s.d2; ++j) {
        std::int64_t wj = (j - d2.center) % d2.m;
        if (wj < 0) wj += d2.m;
        grid[static_cast<std::size_t>(wi * d2.m + wj)] =
            v.at(i, k, j) * (d1.deconv[static_cast<std::size_t>(i)] *
                             d2.deconv[static_cast<std::size_t>(j)]);
      }
    }
    fft2_inplace(grid, d1.m, d2.m, +1);
    for (std::size_t tq = 0; tq < n_targets; ++tq) {
      const std::size_t b1 = tq * 2 * kSpread;
      cplx acc{0.0, 0.0};
      for (int a = 0; a < 2 * kSpread; ++a) {
        const std::int64_t row = d1.gidx[b1 + static_cast<std::size_t>(a)];
        cplx inner{0.0, 0.0};
        for (int b = 0; b < 2 * kSpread; ++b)
          inner += grid[static_cast<std::size_t>(row * d2.m +
                                                 d2.gidx[b1 + static_cast<std::size_t>(b)])] *
                   d2.gwts[b1 + static_cast<std::size_t>(b)];
        acc += inner * d1.gwts[b1 + static_cast<std::size_t>(a)];
      }
      const std::int64_t t = static_cast<std::int64_t>(tq) / geom.w;
      const std::int64_t q = static_cast<std::int64_t>(tq) % geom.w;
      out.at(t, k, q) = acc * (d1.pref * d2.pref) * d1.center_phase(tq, +1) *
                        d2.center_phase(tq, +1);
    }
  }
  return out;
}

Volume fu2d_adj_gridding(const ProjectionSet& p, const Geometry& geom) {
  const Shape3 s = p.shape();  // (n_theta, k-slab, w)
  const FrequencyGrids fg = frequency_grids(geom);
  const DimPlan d1 = DimPlan::make(geom.n1, fg.nu_x);
  const DimPlan d2 = DimPlan::make(geom.n2, fg.nu_y);
  const std::size_t n_targets = fg.nu_x.size();

  Volume out({geom.n1, s.d1, geom.n2}, Domain::space);
  std::vector<cplx> grid(static_cast<std::size_t>(d1.m * d2.m));
  for (std::int64_t k = 0; k < s.d1; ++k) {
    std::fill(grid.begin(), grid.end(), cplx{0.0, 0.0});
    for (std::size_t tq = 0; tq < n_targets; ++tq) {
      const std::int64_t t = static_cast<std::int64_t>(tq) / geom.w;
      const std::int64_t q = static_cast<std::int64_t>(tq) % geom.w;
      const cplx c =
          p.at(t, k, q) * d1.center_phase(tq, -1) * d2.center_phase(tq, -1);
      const std::size_t b1 = tq * 2 * kSpread;
      for (int a = 0; a < 2 * kSpread; ++a) {
        const cplx ca = c * d1.gwts[b1 + static_cast<std::size_t>(a)];
        const std::int64_t row = d1.gidx[b1 + static_cast<std::size_t>(a)];
        for (int b = 0; b < 2 * kSpread; ++b)
          grid[static_cast<std::size_t>(row * d2.m +
                                        d2.gidx[b1 + static_cast<std::size_t>(b)])] +=
              ca * d2.gwts[b1 + static_cast<std::size_t>(b)];
      }
    }
    fft2_inplace(grid, d1.m, d2.m, -1);
    for (std::int64_t i = 0; i < geom.n1; ++i) {
      std::int64_t wi = (i - d1.center) % d1.m;
      if (wi < 0) wi += d1.m;
      for (std::int64_t j = 0; j < geom.n2; ++j) {
        std::int64_t wj = (j - d2.center) % d2.m;
        if (wj < 0) wj += d2.m;
        out.at(i, k, j) = grid[static_cast<std::size_t>(wi * d2.m + wj)] *
                          (d1.pref * d2.pref * d1.deconv[static_cast<std::size_t>(i)] *
                           d2.deconv[static_cast<std::size_t>(j)]);
      }
    }
  }
  return out;
}

}  // namespace mlr::nufft
