#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mlr/array.hpp"
#include "mlr/encoder.hpp"
#include "mlr/memostore.hpp"

namespace mlr {

enum class MemoOutcome : std::uint8_t { miss = 0, remote_hit = 1, cache_hit = 2 };

/// Result of one lookup. A hit of either kind guarantees cs > tau and that
/// the value length matches what the caller asked for.
struct MemoDecision {
  MemoOutcome outcome = MemoOutcome::miss;
  float cs = 0.0f;
  std::vector<std::uint8_t> value;
};

struct MemoClientConfig {
  std::string endpoint;  // "host:port"; empty selects the in-process store
  float tau = 0.92f;
  int nprobe = 8;
  int timeout_ms = 100;
  std::size_t insert_queue_cap = 256;
  std::size_t coalesce_bytes = 4096;
  bool global_cache = false;  // compare against every cached location, not one slot
};

/// Monotone counters; miss + remote_hit + cache_hit == lookups.
struct MemoCounters {
  std::atomic<std::uint64_t> lookups{0};
  std::atomic<std::uint64_t> cache_hits{0};
  std::atomic<std::uint64_t> remote_hits{0};
  std::atomic<std::uint64_t> misses{0};
  std::atomic<std::uint64_t> cache_comparisons{0};
  std::atomic<std::uint64_t> cache_probes{0};  // lookups that had >=1 candidate
  std::atomic<std::uint64_t> timeouts{0};
  std::atomic<std::uint64_t> batches_sent{0};
  std::atomic<std::uint64_t> inserts_enqueued{0};
  std::atomic<std::uint64_t> inserts_sent{0};
  std::atomic<std::uint64_t> inserts_dropped{0};
};

struct MemoCounterSnapshot {
  std::uint64_t lookups = 0, cache_hits = 0, remote_hits = 0, misses = 0;
  std::uint64_t cache_comparisons = 0, cache_probes = 0, timeouts = 0;
  std::uint64_t batches_sent = 0, inserts_enqueued = 0, inserts_sent = 0,
                inserts_dropped = 0;
};

///// One emitted key batch, recorded for the coalescing properties: payload
/// bytes, whether it was forced by a barrier, and the correlation ids inside.
struct BatchRecord {
  std::size_t record_bytes = 0;
  bool barrier = false;
  std::vector<std::uint32_t> corr_ids;
};

namespace detail {
class Transport;
}

/// Compute-node side of memoization: a per-(location, operator) single-slot
/// FIFO cache in front of the key-value service, coalesced batch queries, and
/// a background insertion thread with a bounded drop-on-full queue.
class MemoClient {
 public:
  /// Empty cfg.endpoint uses `local` in process; otherwise connects out and
  /// `local` may be null.
  MemoClient(MemoClientConfig cfg, std::shared_ptr<MemoStore> local = nullptr);
  ~MemoClient();

  MemoClient(const MemoClient&) = delete;
  MemoClient& operator=(const MemoClient&) = delete;

  /// Cache first, then the store. `value_bytes` is the exact length the
  /// caller will accept; mismatched candidates are skipped.
  MemoDecision lookup(const MemoKey& key, std::size_t value_bytes);

  /// Batched form; decisions align index-for-index with `keys`. Remote
  /// queries are coalesced into >= cfg.coalesce_bytes batches with a final
  /// barrier flush.
  std::vector<MemoDecision> lookup_batch(const std::vector<MemoKey>& keys,
                                         const std::vector<std::size_t>& value_bytes);

  /// Fire-and-forget store of a computed result; drops (with a counter) when
  /// the staging buffer is full. Staged entries stay invisible to lookups
  /// until flush_inserts publishes them, which lets the solver confine reuse
  /// to values produced by earlier outer iterations.
  void insert_async(const MemoKey& key, std::vector<std::uint8_t> value);

  /// Publishes staged inserts to the background sender and blocks until each
  /// has been sent and acknowledged.
  void flush_inserts();

  MemoCounterSnapshot counters() const;
  std::uint64_t insert_drops() const { return ctr_.inserts_dropped.load(); }
  std::size_t cached_slots() const;
  /// Batches emitted so far (appended by lookup_batch), for property tests.
  std::vector<BatchRecord> batch_log() const;
  void clear_batch_log();

  const MemoClientConfig& config() const { return cfg_; }

 private:
  struct CacheSlot {
    std::vector<float> key;
    std::vector<std::uint8_t> value;
  };
  using SlotId = std::pair<std::int64_t, std::uint8_t>;  // (location, op)

  struct PendingQuery {
    std::uint32_t corr_id = 0;  // index into the caller's key vector
    const MemoKey* key = nullptr;
    std::size_t value_bytes = 0;
  };

  // Probes the cache under cache_mx_; returns true on an accepted hit.
  bool cache_probe(const MemoKey& key, std::size_t value_bytes, MemoDecision& out);
  void cache_install(const MemoKey& key, std::vector<std::uint8_t> value);
  void send_query_batch(std::vector<PendingQuery>& batch, std::size_t record_bytes,
                        bool barrier, const std::vector<MemoKey>& keys,
                        std::vector<MemoDecision>& decisions);
  void insert_loop();

  MemoClientConfig cfg_;
  std::unique_ptr<detail::Transport> query_transport_;
  std::unique_ptr<detail::Transport> insert_transport_;

  mutable std::mutex cache_mx_;
  std::map<SlotId, CacheSlot> cache_;

  mutable std::mutex log_mx_;
  std::vector<BatchRecord> batch_log_;

  std::mutex queue_mx_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::vector<std::pair<MemoKey, std::vector<std::uint8_t>>> staged_;
  std::deque<std::pair<MemoKey, std::vector<std::uint8_t>>> insert_queue_;
  bool insert_in_flight_ = false;
  bool stop_ = false;
  std::thread insert_thread_;

  MemoCounters ctr_;
};

/// Memo value payload: the chunk's complex samples as little-endian f64 pairs.
std::vector<std::uint8_t> chunk_to_bytes(std::span<const cplx> data);
std::vector<cplx> bytes_to_chunk(const std::vector<std::uint8_t>& bytes);

}  // namespace mlr
