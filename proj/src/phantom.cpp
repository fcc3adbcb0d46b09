#include "mlr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mlr {

PhantomKind phantom_kind_from(const std::string& name) {
  if (name == "blocks") return PhantomKind::blocks;
  if (name == "shepp3d-like" || name == "shepp3d") return PhantomKind::shepp3d;
  if (name == "random-smooth") return PhantomKind::random_smooth;
  throw std::invalid_argument("unknown phantom kind: " + name);
}

const char* phantom_kind_name(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::blocks: return "blocks";
    case PhantomKind::shepp3d: return "shepp3d-like";
    case PhantomKind::random_smooth: return "random-smooth";
  }
  return "?";
}

namespace {

void fill_blocks(Volume& u, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.05, 0.6);
  std::uniform_real_distribution<double> len(0.2, 0.45);
  std::uniform_real_distribution<double> val(0.25, 1.0);
  const Shape3 s = u.shape();
  const int n_boxes = 5;
  for (int b = 0; b < n_boxes; ++b) {
    double f0 = pos(rng), f1 = pos(rng), f2 = pos(rng);
    double l0 = len(rng), l1 = len(rng), l2 = len(rng);
    double v = val(rng);
    auto lo = [](double f, std::int64_t n) {
      return std::clamp<std::int64_t>(static_cast<std::int64_t>(f * static_cast<double>(n)), 0, n - 1);
    };
    auto hi = [](double f, std::int64_t n) {
      return std::clamp<std::int64_t>(static_cast<std::int64_t>(f * static_cast<double>(n)), 1, n);
    };
    std::int64_t i0 = lo(f0, s.d0), i1 = lo(f1, s.d1), i2 = lo(f2, s.d2);
    std::int64_t j0 = hi(f0 + l0, s.d0), j1 = hi(f1 + l1, s.d1), j2 = hi(f2 + l2, s.d2);
    for (std::int64_t i = i0; i < j0; ++i)
      for (std::int64_t j = i1; j < j1; ++j)
        for (std::int64_t k = i2; k < j2; ++k) u.at(i, j, k) += v;
  }
}

struct Ellipsoid {
  double a, b, c;     // semi-axes in [-1, 1] coordinates
  double x0, y0, z0;  // center
  double value;       // additive intensity
};

void fill_shepp(Volume& u) {
  // Axis-aligned variant of the classic nested-ellipsoid head phantom.
  static const Ellipsoid kParts[] = {
      {0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 1.0},
      {0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, -0.8},
      {0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -0.2},
      {0.16, 0.41, 0.28, -0.22, 0.0, 0.0, -0.2},
      {0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.1},
      {0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.1},
      {0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.1},
      {0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.1},
      {0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.1},
      {0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.1},
  };
  const Shape3 s = u.shape();
  for (std::int64_t i = 0; i < s.d0; ++i) {
    double x = 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(s.d0) - 1.0;
    for (std::int64_t j = 0; j < s.d1; ++j) {
      double y = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(s.d1) - 1.0;
      for (std::int64_t k = 0; k < s.d2; ++k) {
        double z = 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(s.d2) - 1.0;
        double acc = 0.0;
        for (const Ellipsoid& e : kParts) {
          double dx = (x - e.x0) / e.a;
          double dy = (y - e.y0) / e.b;
          double dz = (z - e.z0) / e.c;
          if (dx * dx + dy * dy + dz * dz <= 1.0) acc += e.value;
        }
        u.at(i, j, k) = acc;
      }
    }
  }
}

void fill_random_smooth(Volume& u, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Shape3 s = u.shape();
  for (cplx& v : u.flat()) v = noise(rng);
  // One clamped box-blur pass per axis keeps local structure while taming
  // voxel-to-voxel jitter.
  Volume tmp(s, Domain::space);
  auto blur_axis = [&](int axis) {
    for (std::int64_t i = 0; i < s.d0; ++i)
      for (std::int64_t j = 0; j < s.d1; ++j)
        for (std::int64_t k = 0; k < s.d2; ++k) {
          std::int64_t c[3] = {i, j, k};
          cplx acc = 0.0;
          int n = 0;
          for (int off = -1; off <= 1; ++off) {
            std::int64_t q = c[axis] + off;
            if (q < 0 || q >= s.extent(axis)) continue;
            std::int64_t idx[3] = {i, j, k};
            idx[axis] = q;
            acc += u.at(idx[0], idx[1], idx[2]);
            ++n;
          }
          tmp.at(i, j, k) = acc / static_cast<double>(n);
        }
    std::swap(u, tmp);
  };
  for (int axis = 0; axis < 3; ++axis) blur_axis(axis);
}

}  // namespace

Volume make_phantom(Shape3 shape, PhantomKind kind, std::uint64_t seed) {
  if (shape.d0 < 1 || shape.d1 < 1 || shape.d2 < 1)
    throw std::invalid_argument("phantom shape extents must be positive");
  Volume u(shape, Domain::space);
  switch (kind) {
    case PhantomKind::blocks: fill_blocks(u, seed); break;
    case PhantomKind::shepp3d: fill_shepp(u); break;
    case PhantomKind::random_smooth: fill_random_smooth(u, seed); break;
  }
  double peak = 0.0;
  for (const cplx& v : u.flat()) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (cplx& v : u.flat()) v /= peak;
  return u;
}

}  // namespace mlr
