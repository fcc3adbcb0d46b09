#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlr {

using cplx = std::complex<double>;

/// Tags whether array samples live on the spatial grid or on a frequency grid.
enum class Domain : std::uint8_t { space = 0, frequency = 1 };

struct Shape3 {
  std::int64_t d0 = 0;
  std::int64_t d1 = 0;
  std::int64_t d2 = 0;

  std::int64_t count() const { return d0 * d1 * d2; }
  std::int64_t extent(int axis) const {
    switch (axis) {
      case 0: return d0;
      case 1: return d1;
      case 2: return d2;
    }
    throw std::out_of_range("Shape3: axis must be 0, 1 or 2");
  }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

/// Dense rank-3 complex array, row-major, with a domain tag.
class Array3 {
 public:
  Array3() = default;
  Array3(Shape3 shape, Domain domain)
      : shape_(shape), domain_(domain), data_(check_count(shape)) {}

  static Array3 zeros_like(const Array3& a) { return Array3(a.shape_, a.domain_); }

  const Shape3& shape() const { return shape_; }
  Domain domain() const { return domain_; }
  void set_domain(Domain d) { domain_ = d; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  cplx* data() { return data_.data(); }
  const cplx* data() const { return data_.data(); }
  std::span<cplx> flat() { return data_; }
  std::span<const cplx> flat() const { return data_; }

  std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return (i * shape_.d1 + j) * shape_.d2 + k;
  }
  cplx& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data_[index(i, j, k)]; }
  const cplx& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[index(i, j, k)];
  }

  bool all_finite() const;
  bool bits_equal(const Array3& other) const;

 private:
  static std::int64_t check_count(Shape3 s);

  Shape3 shape_{};
  Domain domain_ = Domain::space;
  std::vector<cplx> data_;
};

/// A reconstruction volume and a stack of detector-plane images share the same
/// dense layout; the aliases keep call sites honest about intent.
using Volume = Array3;
using ProjectionSet = Array3;

/// Identifies one slab of a parent array: the split axis, the slab ordinal and
/// its thickness in elements. The ordinal doubles as the locality id used by
/// the memoization cache.
struct ChunkLocation {
  int axis = 0;
  std::int64_t index = 0;
  std::int64_t extent = 0;
  bool operator==(const ChunkLocation&) const = default;
};

struct Chunk {
  ChunkLocation location;
  Array3 data;
  int iteration = 0;
};

/// Splits along `axis` into slabs of `extent` elements; the final slab is
/// shorter when the axis length is not a multiple.
std::vector<Chunk> split_chunks(const Array3& a, int axis, std::int64_t extent);

/// Inverse of split_chunks. Chunks may arrive in any order; they must cover
/// the axis exactly once each.
Array3 merge_chunks(std::span<const Chunk> chunks);

// Dense elementwise helpers shared by the solver and the tests.
cplx vdot(const Array3& a, const Array3& b);  // sum a_i * conj(b_i)
double norm2(const Array3& a);                // Frobenius norm
void axpy(cplx alpha, const Array3& x, Array3& y);
Array3 scaled(const Array3& a, cplx alpha);
Array3 sub(const Array3& a, const Array3& b);
Array3 add(const Array3& a, const Array3& b);

}  // namespace mlr
