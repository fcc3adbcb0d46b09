#pragma once

#include <string>

#include "mlr/array.hpp"

namespace mlr {

/// Raw binary persistence for volumes and projection stacks.
/// Layout: 16-byte header (magic "LVOL", u8 rank, u8 domain, 10 zero bytes),
/// rank little-endian u64 extents, then interleaved little-endian f64
/// (re, im) pairs in row-major order.
void save_array(const std::string& path, const Array3& a);
Array3 load_array(const std::string& path);

}  // namespace mlr
