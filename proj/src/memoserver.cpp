#include "mlr/memoserver.hpp"

#include <span>

#include "mlr/protocol.hpp"

namespace mlr {

namespace {

bool send_msg(net::TcpStream& s, const proto::Message& msg) {
  const std::vector<std::uint8_t> frame = proto::encode(msg);
  return s.write_all(frame.data(), frame.size(), 10000);
}

}  // namespace

MemoServer::MemoServer(ServerConfig cfg)
    : cfg_(std::move(cfg)),
      store_(std::make_unique<MemoStore>(cfg_.ivf)),
      listener_(net::TcpListener::bind_listen(cfg_.host, cfg_.port)) {
  accept_thread_ = std::thread([this] { accept_loop(); });
}

MemoServer::~MemoServer() { stop(); }

std::string MemoServer::address() const {
  return cfg_.host + ":" + std::to_string(listener_.port());
}

void MemoServer::stop() {
  {
    std::lock_guard<std::mutex> lock(conn_mx_);
    if (stopped_) return;
    stopped_ = true;
  }
  listener_.shutdown();
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard<std::mutex> lock(conn_mx_);
    for (auto& c : conns_)
      if (c) c->shutdown_both();
  }
  for (auto& t : threads_)
    if (t.joinable()) t.join();
}

void MemoServer::accept_loop() {
  for (;;) {
    net::TcpStream stream = listener_.accept();
    if (!stream.valid()) return;  // shutdown
    std::lock_guard<std::mutex> lock(conn_mx_);
    if (stopped_) return;
    conns_.push_back(std::make_unique<net::TcpStream>(std::move(stream)));
    net::TcpStream* s = conns_.back().get();
    threads_.emplace_back([this, s] { serve_connection(*s); });
  }
}

void MemoServer::serve_connection(net::TcpStream& stream) {
  std::vector<std::uint8_t> buf;
  std::vector<std::uint8_t> chunk(1 << 16);

  auto reply_error = [&](proto::ErrCode code, const std::string& what) {
    proto::ErrorMsg err;
    err.code = static_cast<std::uint16_t>(code);
    err.message = what;
    return send_msg(stream, proto::Message{err});
  };

  for (;;) {
    // Drain complete frames already buffered.
    std::size_t off = 0;
    bool close_conn = false;
    while (off < buf.size()) {
      const proto::DecodeResult res =
          proto::decode(std::span<const std::uint8_t>(buf).subspan(off));
      if (res.status == proto::DecodeResult::Status::need_more) break;
      if (res.status == proto::DecodeResult::Status::malformed) {
        reply_error(proto::ErrCode::malformed, res.error);
        if (!res.header_ok) {
          close_conn = true;  // cannot find the next frame boundary
          break;
        }
        off += res.consumed;
        continue;
      }

      off += res.consumed;
      const proto::Message& msg = res.msg;
      if (const auto* qb = std::get_if<proto::QueryBatch>(&msg)) {
        const int dim = store_->key_dim();
        bool dim_ok = true;
        for (const proto::QueryItem& it : qb->items)
          if (dim != 0 && static_cast<int>(it.key.size()) != dim) dim_ok = false;
        if (!dim_ok) {
          if (!reply_error(proto::ErrCode::dim_mismatch, "query key dimension mismatch"))
            close_conn = true;
          continue;
        }
        proto::QueryResp resp;
        resp.items.reserve(qb->items.size());
        for (const proto::QueryItem& it : qb->items) {
          const QueryOutcome q = store_->query(it.key, qb->tau, qb->nprobe);
          proto::QueryRespItem ri;
          ri.corr_id = it.corr_id;
          ri.hit = q.hit;
          ri.cs = q.cs;
          if (q.hit) ri.value = q.value;
          resp.items.push_back(std::move(ri));
        }
        if (!send_msg(stream, proto::Message{std::move(resp)})) close_conn = true;
      } else if (const auto* ib = std::get_if<proto::InsertBatch>(&msg)) {
        const int dim = store_->key_dim();
        bool dim_ok = true;
        for (const proto::InsertEntry& e : ib->entries) {
          const int want = dim != 0 ? dim
                                    : static_cast<int>(ib->entries.front().key.size());
          if (static_cast<int>(e.key.size()) != want) dim_ok = false;
        }
        if (!dim_ok) {
          if (!reply_error(proto::ErrCode::dim_mismatch, "insert key dimension mismatch"))
            close_conn = true;
          continue;
        }
        for (const proto::InsertEntry& e : ib->entries) store_->insert(e.key, e.value);
        proto::InsertAck ack;
        ack.count = static_cast<std::uint16_t>(ib->entries.size());
        if (!send_msg(stream, proto::Message{ack})) close_conn = true;
      } else if (std::get_if<proto::Ping>(&msg)) {
        proto::Pong pong;
        pong.key_count = store_->key_count();
        if (!send_msg(stream, proto::Message{pong})) close_conn = true;
      } else {
        // Syntactically valid frame that is not a request.
        if (!reply_error(proto::ErrCode::malformed, "unexpected message type"))
          close_conn = true;
      }
    }
    if (off > 0) buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(off));
    if (close_conn) break;
    if (buf.size() > proto::kMaxPayload + proto::kHeaderSize) {
      reply_error(proto::ErrCode::overload, "frame exceeds buffer limit");
      break;
    }

    const long got = stream.read_some(chunk.data(), chunk.size(), -1);
    if (got <= 0) break;  // peer closed, error, or stop() shut the socket down
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + got);
  }
  stream.shutdown_both();
}

}  // namespace mlr
