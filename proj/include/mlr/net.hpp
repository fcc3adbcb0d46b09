#pragma once

#include <cstdint>
#include <string>
#include <utility>

namespace mlr::net {

struct Address {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "host:port". Throws std::invalid_argument on malformed input.
Address parse_address(const std::string& s);

/// Thin blocking TCP wrapper with poll-based timeouts. Move-only.
class TcpStream {
 public:
  TcpStream() = default;
  TcpStream(TcpStream&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  TcpStream& operator=(TcpStream&& other) noexcept;
  ~TcpStream();

  static TcpStream connect(const std::string& host, std::uint16_t port, int timeout_ms);
  static TcpStream adopt(int fd) { return TcpStream(fd); }

  bool valid() const { return fd_ >= 0; }
  /// Reads exactly n bytes; false on timeout, peer close or error.
  bool read_exact(void* buf, std::size_t n, int timeout_ms);
  /// Reads at most n bytes; returns byte count, 0 on orderly close, -1 on
  /// timeout/error.
  long read_some(void* buf, std::size_t n, int timeout_ms);
  bool write_all(const void* buf, std::size_t n, int timeout_ms);
  /// Unblocks any thread blocked in read/write on this socket.
  void shutdown_both();
  void close();

 private:
  explicit TcpStream(int fd) : fd_(fd) {}
  int fd_ = -1;
};

/// Listening socket with a self-pipe so accept() can be unblocked from
/// another thread. Move-only.
class TcpListener {
 public:
  TcpListener() = default;
  TcpListener(TcpListener&& other) noexcept;
  TcpListener& operator=(TcpListener&&) = delete;
  ~TcpListener();

  /// port 0 picks an ephemeral port.
  static TcpListener bind_listen(const std::string& host, std::uint16_t port);

  std::uint16_t port() const { return port_; }
  /// Blocks until a connection arrives; invalid stream after shutdown().
  TcpStream accept();
  void shutdown();

 private:
  int fd_ = -1;
  int wake_rd_ = -1;
  int wake_wr_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace mlr::net
