#include "mlr/scalerun.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>

#include "mlr/binio.hpp"

namespace mlr {

std::vector<WorkerRange> assign(std::size_t n_chunks, int n_workers) {
  if (n_workers <= 0) throw std::invalid_argument("assign: n_workers must be positive");
  const std::size_t w = static_cast<std::size_t>(n_workers);
  std::vector<WorkerRange> ranges(w);
  const std::size_t base = n_chunks / w;
  const std::size_t extra = n_chunks % w;
  std::size_t at = 0;
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    ranges[i] = {at, at + len};
    at += len;
  }
  return ranges;
}

int chunk_axis_of(OpId op) {
  switch (op) {
    case OpId::fu1d:
    case OpId::fu1d_adj:
      return 0;
    case OpId::fu2d:
    case OpId::fu2d_adj:
      return 1;
    case OpId::f2d:
    case OpId::f2d_adj:
      return 0;
  }
  throw std::invalid_argument("chunk_axis_of: unknown operator");
}

OperatorEngine::OperatorEngine(Geometry geom, EngineConfig cfg,
                               std::shared_ptr<Encoder> encoder,
                               std::shared_ptr<MemoClient> memo)
    : geom_(std::move(geom)), cfg_(cfg), encoder_(std::move(encoder)), memo_(std::move(memo)) {
  if (cfg_.workers <= 0) throw std::invalid_argument("OperatorEngine: workers must be positive");
  if (cfg_.chunk_extent <= 0)
    throw std::invalid_argument("OperatorEngine: chunk_extent must be positive");
  if (cfg_.memo_enabled && (!encoder_ || !memo_))
    throw std::invalid_argument("OperatorEngine: memoization needs an encoder and a client");
  if (cfg_.memo_enabled) register_shapes();
}

namespace {

// Slab extents produced by splitting `axis_len` into `extent`-sized chunks.
std::vector<std::int64_t> slab_extents(std::int64_t axis_len, std::int64_t extent) {
  std::vector<std::int64_t> out;
  for (std::int64_t at = 0; at < axis_len; at += extent)
    out.push_back(std::min(extent, axis_len - at));
  return out;
}

Shape3 with_axis(Shape3 s, int axis, std::int64_t e) {
  switch (axis) {
    case 0: s.d0 = e; break;
    case 1: s.d1 = e; break;
    default: s.d2 = e; break;
  }
  return s;
}

// All memoizable operators are linear, so values are stored together with the
// input norm and rescaled to the live input at reuse. Cosine similarity is
// scale invariant; without the rescale, a near-parallel input of different
// magnitude would reuse a wrongly scaled output.
//
// The fused data-subtraction form is memoized as the linear map itself: the
// key and value cover fu2d(v) only, and the constant d_hat chunk is
// subtracted from the (rescaled) value at reuse. A key over the concatenated
// (v, d_hat) input would be dominated by d_hat, saturating the similarity
// gate whenever v is small, and would tie stored values to one data set.

std::vector<std::uint8_t> pack_value(double in_norm, std::span<const cplx> out) {
  ByteWriter w;
  w.f64(in_norm);
  const std::vector<std::uint8_t> samples = chunk_to_bytes(out);
  w.raw(samples.data(), samples.size());
  return w.take();
}

// Returns the rescaled samples; scale is exactly 1.0 for a bit-identical
// input, so exact re-queries reproduce the original output bit for bit.
std::vector<cplx> unpack_value(const std::vector<std::uint8_t>& value, double live_norm) {
  if (value.size() < 8) throw std::invalid_argument("memo value shorter than its norm header");
  ByteReader r(std::span<const std::uint8_t>(value.data(), 8));
  const double stored_norm = r.f64();
  std::vector<cplx> samples =
      bytes_to_chunk(std::vector<std::uint8_t>(value.begin() + 8, value.end()));
  const double scale = (stored_norm > 0.0 && live_norm > 0.0) ? live_norm / stored_norm : 1.0;
  for (cplx& s : samples) s *= scale;
  return samples;
}

}  // namespace

void OperatorEngine::register_shapes() {
  const Shape3 vol = geom_.volume_shape();
  const Shape3 mid = geom_.mid_shape();
  const Shape3 proj = geom_.projection_shape();
  for (std::int64_t e : slab_extents(vol.d0, cfg_.chunk_extent)) {
    encoder_->register_shape(with_axis(vol, 0, e));  // fu1d input
    encoder_->register_shape(with_axis(mid, 0, e));  // fu1d_adj input
  }
  for (std::int64_t e : slab_extents(mid.d1, cfg_.chunk_extent)) {
    encoder_->register_shape(with_axis(mid, 1, e));   // fu2d input
    encoder_->register_shape(with_axis(proj, 1, e));  // fu2d_adj input
  }
  for (std::int64_t e : slab_extents(proj.d0, cfg_.chunk_extent)) {
    encoder_->register_shape(with_axis(proj, 0, e));  // f2d / f2d_adj input
  }
}

Shape3 OperatorEngine::out_slab_shape(OpId op, Shape3 in) const {
  switch (op) {
    case OpId::fu1d: return {in.d0, geom_.h, in.d2};
    case OpId::fu1d_adj: return {in.d0, geom_.n0, in.d2};
    case OpId::fu2d: return {geom_.n_theta, in.d1, geom_.w};
    case OpId::fu2d_adj: return {geom_.n1, in.d1, geom_.n2};
    case OpId::f2d:
    case OpId::f2d_adj: return in;
  }
  throw std::invalid_argument("out_slab_shape: unknown operator");
}

Domain OperatorEngine::out_domain(OpId op, Domain in) const {
  switch (op) {
    case OpId::fu1d:
    case OpId::fu1d_adj: return in;
    case OpId::fu2d: return Domain::frequency;
    case OpId::fu2d_adj: return Domain::space;
    case OpId::f2d: return Domain::frequency;
    case OpId::f2d_adj: return Domain::space;
  }
  throw std::invalid_argument("out_domain: unknown operator");
}

Array3 OperatorEngine::run_op(OpId op, bool fused, const Array3& in, const Array3* d_hat) const {
  switch (op) {
    case OpId::fu1d: return mlr::fu1d(in, geom_, cfg_.path);
    case OpId::fu1d_adj: return mlr::fu1d_adj(in, geom_, cfg_.path);
    case OpId::fu2d:
      if (fused) return mlr::fused_sub_fu2d(in, *d_hat, geom_, cfg_.path);
      return mlr::fu2d(in, geom_, cfg_.path);
    case OpId::fu2d_adj: return mlr::fu2d_adj(in, geom_, cfg_.path);
    case OpId::f2d: return mlr::f2d(in);
    case OpId::f2d_adj: return mlr::f2d_adj(in);
  }
  throw std::invalid_argument("run_op: unknown operator");
}

MemoKey OperatorEngine::make_key(OpId op, const Chunk& in) const {
  return encoder_->encode(in.data, in.location.index, op);
}

Array3 OperatorEngine::apply(OpId op, bool fused, const Array3& input, const Array3* d_hat,
                             bool memoize) {
  const int axis = chunk_axis_of(op);
  std::vector<Chunk> in_chunks = split_chunks(input, axis, cfg_.chunk_extent);
  std::vector<Chunk> dhat_chunks;
  if (fused) {
    dhat_chunks = split_chunks(*d_hat, axis, cfg_.chunk_extent);
    if (dhat_chunks.size() != in_chunks.size())
      throw std::invalid_argument("fused apply: input and d_hat chunk counts differ");
  }
  const std::size_t n = in_chunks.size();

  if (observer_ && memoize)
    for (Chunk& c : in_chunks) {
      c.iteration = iteration_;
      observer_(op, c);
    }

  const bool use_memo = memoize && cfg_.memo_enabled;
  std::vector<MemoDecision> decisions(n);
  std::vector<MemoKey> keys;
  std::vector<double> in_norms(n, 0.0);
  if (use_memo) {
    keys.reserve(n);
    std::vector<std::size_t> value_bytes;
    value_bytes.reserve(n);
    for (std::size_t c = 0; c < n; ++c) {
      keys.push_back(make_key(op, in_chunks[c]));
      in_norms[c] = norm2(in_chunks[c].data);
      // 8-byte input-norm header plus the complex output samples
      value_bytes.push_back(
          8 + static_cast<std::size_t>(out_slab_shape(op, in_chunks[c].data.shape()).count()) * 16);
    }
    decisions = memo_->lookup_batch(keys, value_bytes);
  }

  std::vector<std::size_t> miss;
  miss.reserve(n);
  for (std::size_t c = 0; c < n; ++c)
    if (!use_memo || decisions[c].outcome == MemoOutcome::miss) miss.push_back(c);

  // Compute the misses; each chunk is independent, so the per-chunk result is
  // identical for any worker count.
  std::vector<Array3> computed(n);
  auto work = [&](std::size_t begin, std::size_t end, std::string& error) {
    for (std::size_t m = begin; m < end; ++m) {
      const std::size_t c = miss[m];
      try {
        computed[c] = run_op(op, fused, in_chunks[c].data, fused ? &dhat_chunks[c].data : nullptr);
      } catch (const std::exception& ex) {
        error = std::string(op_name(op)) + " chunk " +
                std::to_string(in_chunks[c].location.index) + ": " + ex.what();
        return;
      }
    }
  };
  if (cfg_.workers == 1 || miss.size() <= 1) {
    std::string error;
    work(0, miss.size(), error);
    if (!error.empty()) throw std::runtime_error("operator worker failed: " + error);
  } else {
    const std::vector<WorkerRange> ranges = assign(miss.size(), cfg_.workers);
    std::vector<std::string> errors(ranges.size());
    std::vector<std::thread> threads;
    threads.reserve(ranges.size());
    for (std::size_t w = 0; w < ranges.size(); ++w)
      threads.emplace_back([&, w] { work(ranges[w].begin, ranges[w].end, errors[w]); });
    for (auto& t : threads) t.join();
    for (const std::string& e : errors)
      if (!e.empty()) throw std::runtime_error("operator worker failed: " + e);
  }

  // Merge in index order; memo values fill the slabs the compute path skipped.
  std::vector<Chunk> out_chunks(n);
  {
    std::lock_guard<std::mutex> lock(audit_mx_);
    for (std::size_t c = 0; c < n; ++c) {
      const Shape3 oshape = out_slab_shape(op, in_chunks[c].data.shape());
      const std::int64_t oextent = oshape.extent(axis);
      Chunk& oc = out_chunks[c];
      oc.location = {axis, in_chunks[c].location.index, oextent};
      oc.iteration = iteration_;
      if (use_memo && decisions[c].outcome != MemoOutcome::miss) {
        Array3 val(oshape, out_domain(op, in_chunks[c].data.domain()));
        const std::vector<cplx> samples = unpack_value(decisions[c].value, in_norms[c]);
        std::copy(samples.begin(), samples.end(), val.data());
        if (fused) val = sub(val, dhat_chunks[c].data);  // value holds fu2d(v) alone
        oc.data = std::move(val);
      } else {
        oc.data = std::move(computed[c]);
      }
      if (use_memo) {
        ChunkAudit entry{op, in_chunks[c].location, decisions[c].outcome, decisions[c].cs,
                         iteration_, -1.0f};
        if (cfg_.audit_exact && decisions[c].outcome != MemoOutcome::miss) {
          const Array3 exact =
              run_op(op, fused, in_chunks[c].data, fused ? &dhat_chunks[c].data : nullptr);
          const double den = norm2(exact);
          entry.rel_err =
              den > 0.0 ? static_cast<float>(norm2(sub(oc.data, exact)) / den) : 0.0f;
        }
        audit_.push_back(entry);
      }
    }
  }

  if (use_memo) {
    for (const std::size_t c : miss) {
      if (fused) {
        // computed holds fu2d(v) - d_hat; store the linear part
        const Array3 linear = add(out_chunks[c].data, dhat_chunks[c].data);
        memo_->insert_async(keys[c], pack_value(in_norms[c], linear.flat()));
      } else {
        memo_->insert_async(keys[c], pack_value(in_norms[c], out_chunks[c].data.flat()));
      }
    }
    if (cfg_.flush_after_apply) memo_->flush_inserts();
  }
  return merge_chunks(out_chunks);
}

Volume OperatorEngine::fu1d(const Volume& u, bool memoize) {
  return apply(OpId::fu1d, false, u, nullptr, memoize);
}
Volume OperatorEngine::fu1d_adj(const Volume& v, bool memoize) {
  return apply(OpId::fu1d_adj, false, v, nullptr, memoize);
}
ProjectionSet OperatorEngine::fu2d(const Volume& v, bool memoize) {
  return apply(OpId::fu2d, false, v, nullptr, memoize);
}
ProjectionSet OperatorEngine::fu2d_fused(const Volume& v, const ProjectionSet& d_hat,
                                         bool memoize) {
  return apply(OpId::fu2d, true, v, &d_hat, memoize);
}
Volume OperatorEngine::fu2d_adj(const ProjectionSet& p, bool memoize) {
  return apply(OpId::fu2d_adj, false, p, nullptr, memoize);
}
ProjectionSet OperatorEngine::f2d(const ProjectionSet& p, bool memoize) {
  return apply(OpId::f2d, false, p, nullptr, memoize);
}
ProjectionSet OperatorEngine::f2d_adj(const ProjectionSet& p, bool memoize) {
  return apply(OpId::f2d_adj, false, p, nullptr, memoize);
}

std::vector<ChunkAudit> OperatorEngine::audit_log() const {
  std::lock_guard<std::mutex> lock(audit_mx_);
  return audit_;
}

void OperatorEngine::clear_audit_log() {
  std::lock_guard<std::mutex> lock(audit_mx_);
  audit_.clear();
}

void OperatorEngine::flush_inserts() {
  if (memo_) memo_->flush_inserts();
}

void OperatorEngine::set_chunk_observer(std::function<void(OpId, const Chunk&)> fn) {
  observer_ = std::move(fn);
}

}  // namespace mlr
