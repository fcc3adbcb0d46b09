#include "mlr/array.hpp"

#include <algorithm>
#include <cstring>

namespace mlr {

std::string Shape3::str() const {
  return "(" + std::to_string(d0) + ", " + std::to_string(d1) + ", " + std::to_string(d2) + ")";
}

std::int64_t Array3::check_count(Shape3 s) {
  if (s.d0 < 0 || s.d1 < 0 || s.d2 < 0)
    throw std::invalid_argument("Array3: negative extent " + s.str());
  return s.count();
}

bool Array3::all_finite() const {
  for (const cplx& v : data_)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

bool Array3::bits_equal(const Array3& other) const {
  if (shape_ != other.shape_ || domain_ != other.domain_) return false;
  if (data_.empty()) return other.data_.empty();
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(cplx)) == 0;
}

std::vector<Chunk> split_chunks(const Array3& a, int axis, std::int64_t extent) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("split_chunks: bad axis");
  if (extent < 1) throw std::invalid_argument("split_chunks: extent must be >= 1");
  const std::int64_t axis_len = a.shape().extent(axis);
  if (axis_len == 0) return {};

  std::vector<Chunk> out;
  out.reserve(static_cast<std::size_t>((axis_len + extent - 1) / extent));
  for (std::int64_t off = 0, idx = 0; off < axis_len; off += extent, ++idx) {
    const std::int64_t len = std::min(extent, axis_len - off);
    Shape3 cs = a.shape();
    (axis == 0 ? cs.d0 : axis == 1 ? cs.d1 : cs.d2) = len;
    Chunk c;
    c.location = ChunkLocation{axis, idx, len};
    c.data = Array3(cs, a.domain());
    const Shape3 full = a.shape();
    if (axis == 0) {
      std::memcpy(c.data.data(), a.data() + off * full.d1 * full.d2,
                  static_cast<std::size_t>(len * full.d1 * full.d2) * sizeof(cplx));
    } else if (axis == 1) {
      for (std::int64_t i = 0; i < full.d0; ++i)
        std::memcpy(c.data.data() + i * len * full.d2, a.data() + (i * full.d1 + off) * full.d2,
                    static_cast<std::size_t>(len * full.d2) * sizeof(cplx));
    } else {
      for (std::int64_t i = 0; i < full.d0; ++i)
        for (std::int64_t j = 0; j < full.d1; ++j)
          std::memcpy(c.data.data() + (i * cs.d1 + j) * len,
                      a.data() + (i * full.d1 + j) * full.d2 + off,
                      static_cast<std::size_t>(len) * sizeof(cplx));
    }
    out.push_back(std::move(c));
  }
  return out;
}

Array3 merge_chunks(std::span<const Chunk> chunks) {
  if (chunks.empty()) throw std::invalid_argument("merge_chunks: no chunks");
  const int axis = chunks.front().location.axis;
  const Domain dom = chunks.front().data.domain();

  std::vector<const Chunk*> ordered;
  ordered.reserve(chunks.size());
  for (const Chunk& c : chunks) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(), [](const Chunk* a, const Chunk* b) {
    return a->location.index < b->location.index;
  });

  std::int64_t axis_len = 0;
  for (std::size_t n = 0; n < ordered.size(); ++n) {
    const Chunk& c = *ordered[n];
    if (c.location.axis != axis) throw std::invalid_argument("merge_chunks: mixed axes");
    if (c.data.domain() != dom) throw std::invalid_argument("merge_chunks: mixed domains");
    if (c.location.index != static_cast<std::int64_t>(n))
      throw std::invalid_argument("merge_chunks: missing or duplicate chunk index " +
                                  std::to_string(n));
    if (c.location.extent != c.data.shape().extent(axis))
      throw std::invalid_argument("merge_chunks: extent does not match slab thickness");
    axis_len += c.location.extent;
  }

  Shape3 full = ordered.front()->data.shape();
  (axis == 0 ? full.d0 : axis == 1 ? full.d1 : full.d2) = axis_len;
  for (const Chunk* c : ordered) {
    Shape3 cs = c->data.shape();
    Shape3 want = full;
    (axis == 0 ? want.d0 : axis == 1 ? want.d1 : want.d2) = cs.extent(axis);
    if (!(cs == want)) throw std::invalid_argument("merge_chunks: inconsistent slab shapes");
  }

  Array3 out(full, dom);
  std::int64_t off = 0;
  for (const Chunk* cp : ordered) {
    const Array3& c = cp->data;
    const std::int64_t len = cp->location.extent;
    if (axis == 0) {
      std::memcpy(out.data() + off * full.d1 * full.d2, c.data(),
                  static_cast<std::size_t>(len * full.d1 * full.d2) * sizeof(cplx));
    } else if (axis == 1) {
      for (std::int64_t i = 0; i < full.d0; ++i)
        std::memcpy(out.data() + (i * full.d1 + off) * full.d2, c.data() + i * len * full.d2,
                    static_cast<std::size_t>(len * full.d2) * sizeof(cplx));
    } else {
      for (std::int64_t i = 0; i < full.d0; ++i)
        for (std::int64_t j = 0; j < full.d1; ++j)
          std::memcpy(out.data() + (i * full.d1 + j) * full.d2 + off,
                      c.data() + (i * c.shape().d1 + j) * len,
                      static_cast<std::size_t>(len) * sizeof(cplx));
    }
    off += len;
  }
  return out;
}

cplx vdot(const Array3& a, const Array3& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("vdot: shape mismatch");
  cplx acc{0.0, 0.0};
  const cplx* pa = a.data();
  const cplx* pb = b.data();
  for (std::int64_t i = 0; i < a.size(); ++i) acc += pa[i] * std::conj(pb[i]);
  return acc;
}

double norm2(const Array3& a) {
  double acc = 0.0;
  for (const cplx& v : a.flat()) acc += std::norm(v);
  return std::sqrt(acc);
}

void axpy(cplx alpha, const Array3& x, Array3& y) {
  if (!(x.shape() == y.shape())) throw std::invalid_argument("axpy: shape mismatch");
  cplx* py = y.data();
  const cplx* px = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i) py[i] += alpha * px[i];
}

Array3 scaled(const Array3& a, cplx alpha) {
  Array3 out = a;
  for (cplx& v : out.flat()) v *= alpha;
  return out;
}

Array3 sub(const Array3& a, const Array3& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("sub: shape mismatch");
  Array3 out = a;
  const cplx* pb = b.data();
  cplx* po = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) po[i] -= pb[i];
  return out;
}

Array3 add(const Array3& a, const Array3& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("add: shape mismatch");
  Array3 out = a;
  const cplx* pb = b.data();
  cplx* po = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) po[i] += pb[i];
  return out;
}

}  // namespace mlr
