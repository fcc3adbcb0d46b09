#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mlr/memostore.hpp"
#include "mlr/net.hpp"

namespace mlr {

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 = ephemeral
  IvfConfig ivf;
};

/////// Memoization service: one accept thread, one thread per connection.
/// Handles query/insert/ping frames; malformed-but-framed input gets an
/// ERROR reply and the connection survives, an unusable header closes it.
class MemoServer {
 public:
  explicit MemoServer(ServerConfig cfg);
  ~MemoServer();

  MemoServer(const MemoServer&) = delete;
  MemoServer& operator=(const MemoServer&) = delete;

  std::uint16_t port() const { return listener_.port(); }
  std::string address() const;
  MemoStore& store() { return *store_; }
  const MemoStore& store() const { return *store_; }

  void stop();

 private:
  void accept_loop();
  void serve_connection(net::TcpStream& stream);

  ServerConfig cfg_;
  std::unique_ptr<MemoStore> store_;
  net::TcpListener listener_;

  std::mutex conn_mx_;
  std::vector<std::unique_ptr<net::TcpStream>> conns_;
  std::vector<std::thread> threads_;
  std::thread accept_thread_;
  bool stopped_ = false;
};

}  // namespace mlr
