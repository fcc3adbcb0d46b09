#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <vector>

#include "mlr/array.hpp"
#include "mlr/encoder.hpp"
#include "mlr/geometry.hpp"
#include "mlr/memoclient.hpp"
#include "mlr/operators.hpp"

namespace mlr {

struct WorkerRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

/// Balanced contiguous partition of [0, n_chunks): range sizes differ by at
/// most one, earlier workers get the larger ranges. Deterministic.
std::vector<WorkerRange> assign(std::size_t n_chunks, int n_workers);

struct EngineConfig {
  int workers = 1;
  std::int64_t chunk_extent = 16;
  NudftPath path = NudftPath::direct;
  bool memo_enabled = false;
  /// Wait for queued insertions at the end of every operator application.
  /// Off by default: the solver flushes once per outer iteration instead, so
  /// lookups only ever see values stored by earlier iterations. Reuse within
  /// one iteration would feed a chunk's approximation error straight back
  /// into the next conjugate-gradient step and compound it.
  bool flush_after_apply = false;
  /// Also compute every hit exactly and record the relative error of the
  /// reused value in the audit log. Costs a full computation per hit; meant
  /// for tests and reuse-quality studies, not production runs.
  bool audit_exact = false;
};

/// One memoization decision, recorded per chunk for audit and reporting.
struct ChunkAudit {
  OpId op = OpId::fu1d;
  ChunkLocation location;
  MemoOutcome outcome = MemoOutcome::miss;
  float cs = 0.0f;
  int iteration = 0;
  /// ||reused - exact|| / ||exact|| when cfg.audit_exact and this was a hit,
  /// else -1.
  float rel_err = -1.0f;
};

/// Applies the chunkable Fourier operators: splits the input along the
/// operator's partition axis, resolves memo hits sequentially, computes the
/// misses in parallel over the configured workers, and merges slabs back in
/// index order. With memoization off the result is bitwise identical to the
/// unchunked single-threaded operator for any worker count.
class OperatorEngine {
 public:
  OperatorEngine(Geometry geom, EngineConfig cfg, std::shared_ptr<Encoder> encoder = nullptr,
                 std::shared_ptr<MemoClient> memo = nullptr);

  const Geometry& geometry() const { return geom_; }
  const EngineConfig& config() const { return cfg_; }
  MemoClient* memo() const { return memo_.get(); }
  Encoder* encoder() const { return encoder_.get(); }

  /// Outer-iteration number stamped onto chunks and audit entries.
  void set_iteration(int it) { iteration_ = it; }

  // `memoize` only has effect when the engine was built with memoization
  // enabled; the solver passes false for the CG line-search applications,
  // which are not part of the memoizable pipeline.
  Volume fu1d(const Volume& u, bool memoize = true);
  Volume fu1d_adj(const Volume& v, bool memoize = true);
  ProjectionSet fu2d(const Volume& v, bool memoize = true);
  /// fu2d(v) - d_hat in one pass; memoized through its linear part fu2d(v),
  /// with the live d_hat chunk applied around the store.
  ProjectionSet fu2d_fused(const Volume& v, const ProjectionSet& d_hat, bool memoize = true);
  Volume fu2d_adj(const ProjectionSet& p, bool memoize = true);
  ProjectionSet f2d(const ProjectionSet& p, bool memoize = true);
  ProjectionSet f2d_adj(const ProjectionSet& p, bool memoize = true);

  std::vector<ChunkAudit> audit_log() const;
  void clear_audit_log();

  /// Publishes queued insertions to the store. The solver calls this once at
  /// the end of every outer iteration; no-op without a memo client.
  void flush_inserts();

  /// Observer for the input chunks of memoizable applications, invoked
  /// sequentially before any memo lookup. Used to record training chunks
  /// from a reference run; pass nullptr to detach.
  void set_chunk_observer(std::function<void(OpId, const Chunk&)> fn);

 private:
  Array3 apply(OpId op, bool fused, const Array3& input, const Array3* d_hat, bool memoize);
  Array3 run_op(OpId op, bool fused, const Array3& in, const Array3* d_hat) const;
  Shape3 out_slab_shape(OpId op, Shape3 in) const;
  Domain out_domain(OpId op, Domain in) const;
  MemoKey make_key(OpId op, const Chunk& in) const;
  void register_shapes();

  Geometry geom_;
  EngineConfig cfg_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<MemoClient> memo_;
  int iteration_ = 0;

  mutable std::mutex audit_mx_;
  std::vector<ChunkAudit> audit_;
  std::function<void(OpId, const Chunk&)> observer_;
};

/// Partition axis of each operator's input array.
int chunk_axis_of(OpId op);

}  // namespace mlr
