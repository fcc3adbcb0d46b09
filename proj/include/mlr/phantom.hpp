#pragma once

#include <cstdint>
#include <string>

#include "mlr/array.hpp"

namespace mlr {

enum class PhantomKind : std::uint8_t { blocks = 0, shepp3d = 1, random_smooth = 2 };

/// Accepts "blocks", "shepp3d-like" and "random-smooth".
PhantomKind phantom_kind_from(const std::string& name);
const char* phantom_kind_name(PhantomKind kind);

/// Deterministic real-valued test volume. `blocks` is piecewise constant
/// (low total variation), `shepp3d-like` sums nested ellipsoids, and
/// `random-smooth` is lightly blurred seeded noise.
Volume make_phantom(Shape3 shape, PhantomKind kind, std::uint64_t seed);

}  // namespace mlr
