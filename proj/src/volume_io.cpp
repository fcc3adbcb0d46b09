#include "mlr/volume_io.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "mlr/binio.hpp"

namespace mlr {

namespace {
constexpr char kMagic[4] = {'L', 'V', 'O', 'L'};
constexpr std::size_t kHeaderSize = 16;
}  // namespace

void save_array(const std::string& path, const Array3& a) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u8(3);  // rank
  w.u8(static_cast<std::uint8_t>(a.domain()));
  w.zeros(kHeaderSize - 6);
  w.u64(static_cast<std::uint64_t>(a.shape().d0));
  w.u64(static_cast<std::uint64_t>(a.shape().d1));
  w.u64(static_cast<std::uint64_t>(a.shape().d2));
  for (const cplx& v : a.flat()) {
    w.f64(v.real());
    w.f64(v.imag());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(w.bytes().data()),
          static_cast<std::streamsize>(w.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Array3 load_array(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  ByteReader r(bytes);

  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a volume file (bad magic): " + path);
  const std::uint8_t rank = r.u8();
  if (rank != 3) throw std::runtime_error("unsupported rank " + std::to_string(rank));
  const std::uint8_t dom = r.u8();
  if (dom > 1) throw std::runtime_error("bad domain tag in " + path);
  r.skip(kHeaderSize - 6);

  Shape3 shape;
  shape.d0 = static_cast<std::int64_t>(r.u64());
  shape.d1 = static_cast<std::int64_t>(r.u64());
  shape.d2 = static_cast<std::int64_t>(r.u64());
  if (shape.d0 < 0 || shape.d1 < 0 || shape.d2 < 0 ||
      r.remaining() != static_cast<std::size_t>(shape.count()) * 16)
    throw std::runtime_error("volume payload size does not match extents: " + path);

  Array3 a(shape, static_cast<Domain>(dom));
  for (cplx& v : a.flat()) {
    const double re = r.f64();
    const double im = r.f64();
    v = cplx{re, im};
  }
  if (!a.all_finite()) throw std::runtime_error("volume contains non-finite values: " + path);
  return a;
}

}  // namespace mlr
