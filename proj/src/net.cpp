#include "mlr/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace mlr::net {

namespace {

/// poll for one event; true when ready, false on timeout/error.
bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd p{};
  p.fd = fd;
  p.events = events;
  for (;;) {
    const int rc = ::poll(&p, 1, timeout_ms);
    if (rc > 0) return (p.revents & (events | POLLHUP | POLLERR)) != 0;
    if (rc == 0) return false;
    if (errno != EINTR) return false;
  }
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw std::invalid_argument("not an IPv4 address: " + host);
  return addr;
}

}  // namespace

Address parse_address(const std::string& s) {
  const std::size_t colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= s.size())
    throw std::invalid_argument("address must be host:port, got '" + s + "'");
  Address a;
  a.host = s.substr(0, colon);
  const std::string ps = s.substr(colon + 1);
  int port = 0;
  for (char c : ps) {
    if (c < '0' || c > '9') throw std::invalid_argument("bad port in '" + s + "'");
    port = port * 10 + (c - '0');
    if (port > 65535) throw std::invalid_argument("port out of range in '" + s + "'");
  }
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

TcpStream::~TcpStream() { close(); }

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port, int timeout_ms) {
  const sockaddr_in addr = make_addr(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");

  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr));
  if (rc != 0 && errno != EINPROGRESS) {
    ::close(fd);
    return TcpStream();
  }
  if (rc != 0) {
    if (!wait_fd(fd, POLLOUT, timeout_ms)) {
      ::close(fd);
      return TcpStream();
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      ::close(fd);
      return TcpStream();
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return TcpStream(fd);
}

long TcpStream::read_some(void* buf, std::size_t n, int timeout_ms) {
  if (fd_ < 0) return -1;
  if (!wait_fd(fd_, POLLIN, timeout_ms)) return -1;
  for (;;) {
    const ssize_t rc = ::recv(fd_, buf, n, 0);
    if (rc >= 0) return static_cast<long>(rc);
    if (errno != EINTR) return -1;
  }
}

bool TcpStream::read_exact(void* buf, std::size_t n, int timeout_ms) {
  auto* p = static_cast<std::uint8_t*>(buf);
  std::size_t got = 0;
  while (got < n) {
    const long rc = read_some(p + got, n - got, timeout_ms);
    if (rc <= 0) return false;
    got += static_cast<std::size_t>(rc);
  }
  return true;
}

bool TcpStream::write_all(const void* buf, std::size_t n, int timeout_ms) {
  if (fd_ < 0) return false;
  const auto* p = static_cast<const std::uint8_t*>(buf);
  std::size_t sent = 0;
  while (sent < n) {
    if (!wait_fd(fd_, POLLOUT, timeout_ms)) return false;
    const ssize_t rc = ::send(fd_, p + sent, n - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(rc);
  }
  return true;
}

void TcpStream::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpStream::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(TcpListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      wake_rd_(std::exchange(other.wake_rd_, -1)),
      wake_wr_(std::exchange(other.wake_wr_, -1)),
      port_(other.port_) {}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
  if (wake_rd_ >= 0) ::close(wake_rd_);
  if (wake_wr_ >= 0) ::close(wake_wr_);
}

TcpListener TcpListener::bind_listen(const std::string& host, std::uint16_t port) {
  sockaddr_in addr = make_addr(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + ": " +
                             std::strerror(errno));
  }
  if (::listen(fd, 64) != 0) {
    ::close(fd);
    throw std::runtime_error("listen() failed");
  }

  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &blen);

  int pipefd[2];
  if (::pipe(pipefd) != 0) {
    ::close(fd);
    throw std::runtime_error("pipe() failed");
  }

  TcpListener l;
  l.fd_ = fd;
  l.wake_rd_ = pipefd[0];
  l.wake_wr_ = pipefd[1];
  l.port_ = ntohs(bound.sin_port);
  return l;
}

TcpStream TcpListener::accept() {
  if (fd_ < 0) return TcpStream();
  for (;;) {
    pollfd fds[2];
    fds[0] = {fd_, POLLIN, 0};
    fds[1] = {wake_rd_, POLLIN, 0};
    const int rc = ::poll(fds, 2, -1);
    if (rc < 0) {
      if (errno == EINTR) continue;
      return TcpStream();
    }
    if (fds[1].revents != 0) return TcpStream();  // shutdown requested
    if (fds[0].revents != 0) {
      const int cfd = ::accept(fd_, nullptr, nullptr);
      if (cfd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return TcpStream();
      }
      const int one = 1;
      ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return TcpStream::adopt(cfd);
    }
  }
}

void TcpListener::shutdown() {
  if (wake_wr_ >= 0) {
    const char b = 1;
    [[maybe_unused]] const ssize_t rc = ::write(wake_wr_, &b, 1);
  }
}

}  // namespace mlr::net
