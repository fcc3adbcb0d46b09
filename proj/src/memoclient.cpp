#include "mlr/memoclient.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <stdexcept>

#include "mlr/binio.hpp"
#include "mlr/net.hpp"
#include "mlr/protocol.hpp"

namespace mlr {

namespace detail {

class Transport {
 public:
  virtual ~Transport() = default;
  virtual bool query(const proto::QueryBatch& qb, proto::QueryResp& out) = 0;
  virtual bool insert(const proto::InsertBatch& ib) = 0;
};

namespace {

class LocalTransport final : public Transport {
 public:
  explicit LocalTransport(std::shared_ptr<MemoStore> store) : store_(std::move(store)) {}

  bool query(const proto::QueryBatch& qb, proto::QueryResp& out) override {
    out.items.clear();
    out.items.reserve(qb.items.size());
    for (const proto::QueryItem& it : qb.items) {
      const QueryOutcome q = store_->query(it.key, qb.tau, qb.nprobe);
      proto::QueryRespItem ri;
      ri.corr_id = it.corr_id;
      ri.hit = q.hit;
      ri.cs = q.cs;
      if (q.hit) ri.value = q.value;
      out.items.push_back(std::move(ri));
    }
    return true;
  }

  bool insert(const proto::InsertBatch& ib) override {
    for (const proto::InsertEntry& e : ib.entries) store_->insert(e.key, e.value);
    return true;
  }

 private:
  std::shared_ptr<MemoStore> store_;
};

class RemoteTransport final : public Transport {
 public:
  RemoteTransport(std::string endpoint, int timeout_ms)
      : endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {}

  bool query(const proto::QueryBatch& qb, proto::QueryResp& out) override {
    proto::Message resp;
    if (!roundtrip(proto::Message{qb}, resp)) return false;
    auto* qr = std::get_if<proto::QueryResp>(&resp);
    if (!qr) return false;
    out = std::move(*qr);
    return true;
  }

  bool insert(const proto::InsertBatch& ib) override {
    proto::Message resp;
    if (!roundtrip(proto::Message{ib}, resp)) return false;
    return std::holds_alternative<proto::InsertAck>(resp);
  }

 private:
  bool ensure_connected() {
    if (stream_.valid()) return true;
    buf_.clear();
    try {
      const net::Address addr = net::parse_address(endpoint_);
      stream_ = net::TcpStream::connect(addr.host, addr.port, timeout_ms_);
    } catch (const std::exception&) {
      return false;
    }
    return stream_.valid();
  }

  // One request, one response frame, under the configured timeout.
  bool roundtrip(const proto::Message& req, proto::Message& resp) {
    if (!ensure_connected()) return false;
    const std::vector<std::uint8_t> frame = proto::encode(req);
    if (!stream_.write_all(frame.data(), frame.size(), timeout_ms_)) {
      drop();
      return false;
    }
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
    std::vector<std::uint8_t> chunk(1 << 16);
    for (;;) {
      proto::DecodeResult res = proto::decode(buf_);
      if (res.status == proto::DecodeResult::Status::ok) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(res.consumed));
        resp = std::move(res.msg);
        return true;
      }
      if (res.status == proto::DecodeResult::Status::malformed) {
        drop();
        return false;
      }
      const auto now = std::chrono::steady_clock::now();
      if (now >= deadline) {
        drop();  // a late reply would desynchronize the stream
        return false;
      }
      const int remain = static_cast<int>(
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
      const long got = stream_.read_some(chunk.data(), chunk.size(), std::max(remain, 1));
      if (got <= 0) {
        drop();
        return false;
      }
      buf_.insert(buf_.end(), chunk.begin(), chunk.begin() + got);
    }
  }

  void drop() {
    stream_ = net::TcpStream();
    buf_.clear();
  }

  std::string endpoint_;
  int timeout_ms_;
  net::TcpStream stream_;
  std::vector<std::uint8_t> buf_;
};

}  // namespace

}  // namespace detail

namespace {

std::size_t query_record_bytes(const MemoKey& key) {
  return 4 + 4 + 4 * key.values.size();  // corr_id + key_dim + f32 payload
}

}  // namespace

MemoClient::MemoClient(MemoClientConfig cfg, std::shared_ptr<MemoStore> local)
    : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) {
    if (!local) local = std::make_shared<MemoStore>();
    query_transport_ = std::make_unique<detail::LocalTransport>(local);
    insert_transport_ = std::make_unique<detail::LocalTransport>(local);
  } else {
    query_transport_ =
        std::make_unique<detail::RemoteTransport>(cfg_.endpoint, cfg_.timeout_ms);
    insert_transport_ =
        std::make_unique<detail::RemoteTransport>(cfg_.endpoint, cfg_.timeout_ms);
  }
  insert_thread_ = std::thread([this] { insert_loop(); });
}

MemoClient::~MemoClient() {
  {
    std::lock_guard<std::mutex> lock(queue_mx_);
    stop_ = true;
  }
  queue_cv_.notify_all();
  if (insert_thread_.joinable()) insert_thread_.join();
}

MemoDecision MemoClient::lookup(const MemoKey& key, std::size_t value_bytes) {
  std::vector<MemoKey> keys{key};
  return lookup_batch(keys, {value_bytes}).front();
}

bool MemoClient::cache_probe(const MemoKey& key, std::size_t value_bytes,
                             MemoDecision& out) {
  std::lock_guard<std::mutex> lock(cache_mx_);
  const CacheSlot* best = nullptr;
  float best_cs = 0.0f;
  std::uint64_t compared = 0;
  if (cfg_.global_cache) {
    // One comparison per stored location holding this operator's results.
    for (const auto& [id, slot] : cache_) {
      if (id.second != static_cast<std::uint8_t>(key.op)) continue;
      const float cs = cosine_similarity(key.values, slot.key);
      ++compared;
      if (!best || cs > best_cs) {
        best = &slot;
        best_cs = cs;
      }
    }
  } else {
    const auto it = cache_.find({key.location, static_cast<std::uint8_t>(key.op)});
    if (it != cache_.end()) {
      best = &it->second;
      best_cs = cosine_similarity(key.values, it->second.key);
      compared = 1;
    }
  }
  ctr_.cache_comparisons += compared;
  if (compared > 0) ++ctr_.cache_probes;
  if (best && best_cs > cfg_.tau && best->value.size() == value_bytes) {
    out.outcome = MemoOutcome::cache_hit;
    out.cs = best_cs;
    out.value = best->value;
    return true;
  }
  return false;
}

void MemoClient::cache_install(const MemoKey& key, std::vector<std::uint8_t> value) {
  std::lock_guard<std::mutex> lock(cache_mx_);
  CacheSlot& slot = cache_[{key.location, static_cast<std::uint8_t>(key.op)}];
  slot.key = key.values;  // unconditional FIFO replacement
  slot.value = std::move(value);
}

std::vector<MemoDecision> MemoClient::lookup_batch(
    const std::vector<MemoKey>& keys, const std::vector<std::size_t>& value_bytes) {
  if (keys.size() != value_bytes.size())
    throw std::invalid_argument("lookup_batch: keys/value_bytes size mismatch");
  std::vector<MemoDecision> decisions(keys.size());
  ctr_.lookups += keys.size();

  std::vector<PendingQuery> batch;
  std::size_t batch_bytes = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (cache_probe(keys[i], value_bytes[i], decisions[i])) {
      ++ctr_.cache_hits;
      continue;
    }
    // Keys of the same chunk location from different operators are
    // pipeline-dependent and must not share a batch.
    const bool conflict = std::any_of(batch.begin(), batch.end(), [&](const PendingQuery& p) {
      return p.key->location == keys[i].location && p.key->op != keys[i].op;
    });
    if (conflict) {
      send_query_batch(batch, batch_bytes, true, keys, decisions);
      batch_bytes = 0;
    }
    batch.push_back({static_cast<std::uint32_t>(i), &keys[i], value_bytes[i]});
    batch_bytes += query_record_bytes(keys[i]);
    if (batch_bytes >= cfg_.coalesce_bytes) {
      send_query_batch(batch, batch_bytes, false, keys, decisions);
      batch_bytes = 0;
    }
  }
  if (!batch.empty()) send_query_batch(batch, batch_bytes, true, keys, decisions);
  return decisions;
}

void MemoClient::send_query_batch(std::vector<PendingQuery>& batch,
                                  std::size_t record_bytes, bool barrier,
                                  const std::vector<MemoKey>& keys,
                                  std::vector<MemoDecision>& decisions) {
  proto::QueryBatch qb;
  qb.tau = cfg_.tau;
  qb.nprobe = static_cast<std::uint16_t>(std::clamp(cfg_.nprobe, 1, 65535));
  qb.items.reserve(batch.size());
  BatchRecord rec;
  rec.record_bytes = record_bytes;
  rec.barrier = barrier;
  for (const PendingQuery& p : batch) {
    qb.items.push_back({p.corr_id, p.key->values});
    rec.corr_ids.push_back(p.corr_id);
  }
  {
    std::lock_guard<std::mutex> lock(log_mx_);
    batch_log_.push_back(std::move(rec));
  }
  ++ctr_.batches_sent;

  proto::QueryResp resp;
  const bool ok = query_transport_->query(qb, resp);
  if (!ok) ++ctr_.timeouts;

  // Demultiplex by correlation id; anything unanswered is a miss.
  std::map<std::uint32_t, proto::QueryRespItem*> by_id;
  if (ok)
    for (proto::QueryRespItem& ri : resp.items) by_id[ri.corr_id] = &ri;
  for (const PendingQuery& p : batch) {
    MemoDecision& dec = decisions[p.corr_id];
    const auto it = by_id.find(p.corr_id);
    if (it != by_id.end() && it->second->hit && it->second->cs > cfg_.tau &&
        it->second->value.size() == p.value_bytes) {
      dec.outcome = MemoOutcome::remote_hit;
      dec.cs = it->second->cs;
      dec.value = std::move(it->second->value);
      cache_install(keys[p.corr_id], dec.value);
      ++ctr_.remote_hits;
    } else {
      dec.outcome = MemoOutcome::miss;
      dec.cs = it != by_id.end() ? it->second->cs : 0.0f;
      ++ctr_.misses;
    }
  }
  batch.clear();
}

void MemoClient::insert_async(const MemoKey& key, std::vector<std::uint8_t> value) {
  {
    std::lock_guard<std::mutex> lock(queue_mx_);
    if (staged_.size() >= cfg_.insert_queue_cap) {
      ++ctr_.inserts_dropped;
      return;
    }
    staged_.emplace_back(key, std::move(value));
  }
  ++ctr_.inserts_enqueued;
}

void MemoClient::flush_inserts() {
  std::unique_lock<std::mutex> lock(queue_mx_);
  // Publishing deliberately does not touch the private cache: inserted values
  // become reachable through the store only, so an insert followed by a
  // lookup of the same key is a remote hit, and the cache slot fills from
  // that hit. Installing here instead would pin every slot to the value from
  // exactly one iteration ago and shadow closer entries the store may hold.
  for (auto& item : staged_) insert_queue_.push_back(std::move(item));
  staged_.clear();
  queue_cv_.notify_one();
  idle_cv_.wait(lock, [this] { return insert_queue_.empty() && !insert_in_flight_; });
}

void MemoClient::insert_loop() {
  for (;;) {
    std::pair<MemoKey, std::vector<std::uint8_t>> item;
    {
      std::unique_lock<std::mutex> lock(queue_mx_);
      queue_cv_.wait(lock, [this] { return stop_ || !insert_queue_.empty(); });
      if (insert_queue_.empty()) return;  // stop requested and drained
      item = std::move(insert_queue_.front());
      insert_queue_.pop_front();
      insert_in_flight_ = true;
    }
    proto::InsertBatch ib;
    ib.entries.push_back({item.first.values, std::move(item.second)});
    if (insert_transport_->insert(ib))
      ++ctr_.inserts_sent;
    else
      ++ctr_.inserts_dropped;  // best effort: a failed send is a silent drop
    {
      std::lock_guard<std::mutex> lock(queue_mx_);
      insert_in_flight_ = false;
    }
    idle_cv_.notify_all();
  }
}

MemoCounterSnapshot MemoClient::counters() const {
  MemoCounterSnapshot s;
  s.lookups = ctr_.lookups.load();
  s.cache_hits = ctr_.cache_hits.load();
  s.remote_hits = ctr_.remote_hits.load();
  s.misses = ctr_.misses.load();
  s.cache_comparisons = ctr_.cache_comparisons.load();
  s.cache_probes = ctr_.cache_probes.load();
  s.timeouts = ctr_.timeouts.load();
  s.batches_sent = ctr_.batches_sent.load();
  s.inserts_enqueued = ctr_.inserts_enqueued.load();
  s.inserts_sent = ctr_.inserts_sent.load();
  s.inserts_dropped = ctr_.inserts_dropped.load();
  return s;
}

std::size_t MemoClient::cached_slots() const {
  std::lock_guard<std::mutex> lock(cache_mx_);
  return cache_.size();
}

std::vector<BatchRecord> MemoClient::batch_log() const {
  std::lock_guard<std::mutex> lock(log_mx_);
  return batch_log_;
}

void MemoClient::clear_batch_log() {
  std::lock_guard<std::mutex> lock(log_mx_);
  batch_log_.clear();
}

std::vector<std::uint8_t> chunk_to_bytes(std::span<const cplx> data) {
  std::vector<std::uint8_t> out(data.size() * 16);
  if (data.empty()) return out;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), data.data(), out.size());
  } else {
    ByteWriter w;
    for (const cplx& c : data) {
      w.f64(c.real());
      w.f64(c.imag());
    }
    out = w.take();
  }
  return out;
}

std::vector<cplx> bytes_to_chunk(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 16 != 0)
    throw std::invalid_argument("memo value length is not a whole number of complex samples");
  std::vector<cplx> out(bytes.size() / 16);
  if (out.empty()) return out;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data(), bytes.size());
  } else {
    ByteReader r(std::span<const std::uint8_t>(bytes.data(), bytes.size()));
    for (cplx& c : out) {
      const double re = r.f64();
      const double im = r.f64();
      c = {re, im};
    }
  }
  return out;
}

}  // namespace mlr
