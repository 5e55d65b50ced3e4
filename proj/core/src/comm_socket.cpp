// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/comm_socket.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <thread>

#include "laminar/error.hpp"
#include "laminar/message_store.hpp"

namespace laminar {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

HostPort parse_host_port(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ConfigError(msg("rendezvous must be host:port, got '", s, "'"));
  }
  HostPort hp;
  hp.host = s.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError(msg("rendezvous port is not a number in '", s, "'"));
  }
  if (port < 0 || port > 65535) throw ConfigError(msg("rendezvous port out of range in '", s, "'"));
  hp.port = static_cast<std::uint16_t>(port);
  return hp;
}

[[noreturn]] void sys_fail(const std::string& what) {
  throw TransportError(msg(what, ": ", std::strerror(errno)));
}

void write_all(int fd, const std::uint8_t* data, std::size_t size) {
  std::size_t done = 0;
  while (done < size) {
    ssize_t n = ::send(fd, data + done, size - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("socket write");
    }
    done += static_cast<std::size_t>(n);
  }
}

/// Returns false on clean EOF at a frame boundary.
bool read_all(int fd, std::uint8_t* data, std::size_t size) {
  std::size_t done = 0;
  while (done < size) {
    ssize_t n = ::recv(fd, data + done, size - done, 0);
    if (n == 0) {
      if (done == 0) return false;
      throw TransportError(msg("socket closed mid-frame after ", done, " of ", size, " bytes"));
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("socket read");
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

int make_listener(std::uint16_t port, int backlog, std::uint16_t* bound_port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd);
    sys_fail(msg("bind to port ", port));
  }
  if (::listen(fd, backlog) < 0) {
    ::close(fd);
    sys_fail("listen");
  }
  socklen_t len = sizeof(addr);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    ::close(fd);
    sys_fail("getsockname");
  }
  if (bound_port) *bound_port = ntohs(addr.sin_port);
  return fd;
}

int connect_with_retry(const std::string& host, std::uint16_t port, double timeout_sec) {
  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(timeout_sec));
  in_addr ip{};
  if (::inet_pton(AF_INET, host.c_str(), &ip) != 1) {
    if (host == "localhost") {
      ::inet_pton(AF_INET, "127.0.0.1", &ip);
    } else {
      throw ConfigError(msg("rendezvous host must be an IPv4 address, got '", host, "'"));
    }
  }
  for (;;) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) sys_fail("socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr = ip;
    addr.sin_port = htons(port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) return fd;
    ::close(fd);
    if (clock::now() >= deadline) {
      throw TimeoutError(msg("rendezvous connect to ", host, ":", port, " timed out after ",
                             timeout_sec, "s"));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

constexpr std::size_t kHeaderAfterLen = 1 + 8 + 4 + 4 + 4;  // kind, tag, src, dst, ndims
constexpr std::size_t kMaxFrame = 1ULL << 31;

}  // namespace

std::vector<std::uint8_t> encode_frame(const Message& m) {
  const auto& shape = m.payload.shape();
  const std::size_t body = kHeaderAfterLen + 8 * shape.size() +
                           8 * static_cast<std::size_t>(m.payload.size());
  std::vector<std::uint8_t> out;
  out.reserve(4 + body);
  put_u32(out, static_cast<std::uint32_t>(body));
  out.push_back(static_cast<std::uint8_t>(m.kind));
  put_u64(out, m.tag);
  put_u32(out, static_cast<std::uint32_t>(m.src));
  put_u32(out, static_cast<std::uint32_t>(m.dst));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u64(out, static_cast<std::uint64_t>(d));
  for (std::int64_t i = 0; i < m.payload.size(); ++i) {
    std::uint64_t bits;
    double v = m.payload.at(i);
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
  }
  return out;
}

Message decode_frame(const std::uint8_t* data, std::size_t size) {
  if (size < kHeaderAfterLen) throw TransportError(msg("frame too short: ", size, " bytes"));
  Message m;
  const std::uint8_t kind = data[0];
  if (kind > static_cast<std::uint8_t>(MsgKind::ControlBarrier)) {
    throw TransportError(msg("frame has unknown message kind ", int(kind)));
  }
  m.kind = static_cast<MsgKind>(kind);
  m.tag = get_u64(data + 1);
  m.src = static_cast<int>(get_u32(data + 9));
  m.dst = static_cast<int>(get_u32(data + 13));
  const std::uint32_t ndims = get_u32(data + 17);
  if (ndims > 4) throw TransportError(msg("frame shape rank ", ndims, " exceeds 4"));
  std::size_t off = kHeaderAfterLen;
  if (size < off + 8 * ndims) throw TransportError("frame truncated in shape dims");
  std::vector<std::int64_t> shape;
  std::int64_t count = ndims ? 1 : 0;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    auto d = static_cast<std::int64_t>(get_u64(data + off));
    off += 8;
    if (d <= 0) throw TransportError(msg("frame has non-positive dim ", d));
    shape.push_back(d);
    count *= d;
  }
  const std::size_t want = off + 8 * static_cast<std::size_t>(count);
  if (size != want) {
    throw TransportError(msg("frame payload size mismatch: expected ", want, " bytes, got ", size));
  }
  if (ndims > 0) {
    std::vector<double> values(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      std::uint64_t bits = get_u64(data + off);
      off += 8;
      std::memcpy(&values[static_cast<std::size_t>(i)], &bits, sizeof(double));
    }
    m.payload = Tensor(std::move(shape), std::move(values));
  }
  return m;
}

class SocketEndpoint final : public Endpoint {
 public:
  SocketEndpoint(int rank, int world) : rank_(rank), world_(world), store_(rank) {
    peer_fds_.assign(static_cast<std::size_t>(world), -1);
    write_mus_ = std::vector<std::mutex>(static_cast<std::size_t>(world));
  }

  ~SocketEndpoint() override { close(); }

  int rank() const override { return rank_; }
  int world_size() const override { return world_; }

  void send(Message m) override {
    if (m.dst < 0 || m.dst >= world_ || m.dst == rank_) {
      throw TransportError(msg("rank ", rank_, ": send to unknown rank ", m.dst));
    }
    m.src = rank_;
    auto frame = encode_frame(m);
    std::lock_guard<std::mutex> lk(write_mus_[static_cast<std::size_t>(m.dst)]);
    int fd = peer_fds_[static_cast<std::size_t>(m.dst)];
    if (fd < 0) throw TransportError(msg("rank ", rank_, ": connection to rank ", m.dst, " closed"));
    write_all(fd, frame.data(), frame.size());
  }

  bool try_send(Message& m) override {
    send(std::move(m));
    return true;
  }

  Message recv(int src, std::uint64_t tag) override { return recv_idle(src, tag, nullptr); }

  Message recv_idle(int src, std::uint64_t tag, const std::function<void()>& idle) override {
    if (src < 0 || src >= world_ || src == rank_) {
      throw TransportError(msg("rank ", rank_, ": recv from unknown rank ", src));
    }
    return store_.take(src, tag, timeout_, idle);
  }

  void set_timeout(double seconds) override { timeout_ = seconds; }
  double timeout() const override { return timeout_; }

  void close() override {
    bool expected = false;
    if (!closing_.compare_exchange_strong(expected, true)) return;
    for (int p = 0; p < world_; ++p) {
      std::lock_guard<std::mutex> lk(write_mus_[static_cast<std::size_t>(p)]);
      int fd = peer_fds_[static_cast<std::size_t>(p)];
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : readers_) {
      if (t.joinable()) t.join();
    }
    readers_.clear();
    for (auto& fd : peer_fds_) {
      if (fd >= 0) ::close(fd);
      fd = -1;
    }
    store_.close("endpoint closed");
  }

  void adopt_peer(int peer, int fd) {
    peer_fds_[static_cast<std::size_t>(peer)] = fd;
  }

  void start_readers() {
    for (int p = 0; p < world_; ++p) {
      if (p == rank_) continue;
      readers_.emplace_back([this, p] { reader_loop(p); });
    }
  }

 private:
  void reader_loop(int peer) {
    const int fd = peer_fds_[static_cast<std::size_t>(peer)];
    std::vector<std::uint8_t> buf;
    try {
      for (;;) {
        std::uint8_t len_bytes[4];
        if (!read_all(fd, len_bytes, 4)) break;  // clean EOF
        const std::uint32_t body = get_u32(len_bytes);
        if (body < kHeaderAfterLen || body > kMaxFrame) {
          throw TransportError(msg("bad frame length ", body, " from rank ", peer));
        }
        buf.resize(body);
        if (!read_all(fd, buf.data(), body)) {
          throw TransportError(msg("EOF inside frame from rank ", peer));
        }
        Message m = decode_frame(buf.data(), body);
        if (m.src != peer || m.dst != rank_) {
          throw TransportError(msg("misrouted frame: claims ", m.src, "->", m.dst,
                                   " on link ", peer, "->", rank_));
        }
        store_.deposit(std::move(m));
      }
    } catch (const std::exception& e) {
      if (!closing_.load()) {
        store_.close(msg("peer ", peer, " failed: ", e.what()));
      }
    }
  }

  const int rank_;
  const int world_;
  MessageStore store_;
  std::vector<int> peer_fds_;
  std::vector<std::mutex> write_mus_;
  std::vector<std::thread> readers_;
  std::atomic<bool> closing_{false};
  double timeout_ = 60.0;

  friend std::unique_ptr<Endpoint> connect_socket_world(int, int, const SocketOptions&);
};

namespace {

struct PeerAddr {
  std::uint32_t ip = 0;  // network byte order
  std::uint16_t port = 0;
};

void send_exact(int fd, const void* p, std::size_t n) {
  write_all(fd, static_cast<const std::uint8_t*>(p), n);
}

void recv_exact(int fd, void* p, std::size_t n) {
  if (!read_all(fd, static_cast<std::uint8_t*>(p), n)) {
    throw TransportError("connection closed during rendezvous");
  }
}

}  // namespace

std::unique_ptr<Endpoint> connect_socket_world(int rank, int world_size,
                                               const SocketOptions& options) {
  if (world_size < 1) throw ConfigError("world size must be >= 1");
  if (rank < 0 || rank >= world_size) {
    throw ConfigError(msg("rank ", rank, " outside world of ", world_size));
  }
  auto ep = std::make_unique<SocketEndpoint>(rank, world_size);
  if (world_size == 1) return ep;

  const HostPort rv = parse_host_port(options.rendezvous);

  if (rank == 0) {
    std::uint16_t bound = 0;
    int lfd = make_listener(rv.port, world_size, &bound);
    if (options.bound_port_out) *options.bound_port_out = bound;
    // Accept a hello (rank + that rank's own listener port) from everyone.
    std::vector<PeerAddr> table(static_cast<std::size_t>(world_size));
    for (int i = 1; i < world_size; ++i) {
      sockaddr_in peer_addr{};
      socklen_t alen = sizeof(peer_addr);
      int cfd = ::accept(lfd, reinterpret_cast<sockaddr*>(&peer_addr), &alen);
      if (cfd < 0) sys_fail("accept");
      std::uint8_t hello[6];
      recv_exact(cfd, hello, sizeof(hello));
      const int peer_rank = static_cast<int>(get_u32(hello));
      if (peer_rank < 1 || peer_rank >= world_size) {
        ::close(cfd);
        throw TransportError(msg("rendezvous hello with bad rank ", peer_rank));
      }
      table[static_cast<std::size_t>(peer_rank)].ip = peer_addr.sin_addr.s_addr;
      table[static_cast<std::size_t>(peer_rank)].port =
          static_cast<std::uint16_t>((hello[4] << 8) | hello[5]);
      ep->adopt_peer(peer_rank, cfd);
    }
    ::close(lfd);
    // Publish the address table; the hello connections stay open as the
    // rank-0 mesh links.
    std::vector<std::uint8_t> blob;
    for (int r = 1; r < world_size; ++r) {
      const auto& pa = table[static_cast<std::size_t>(r)];
      put_u32(blob, static_cast<std::uint32_t>(r));
      put_u32(blob, ntohl(pa.ip));
      blob.push_back(static_cast<std::uint8_t>(pa.port >> 8));
      blob.push_back(static_cast<std::uint8_t>(pa.port));
    }
    for (int r = 1; r < world_size; ++r) {
      send_exact(ep->peer_fds_[static_cast<std::size_t>(r)], blob.data(), blob.size());
    }
  } else {
    // Own listener for peers with higher ranks.
    std::uint16_t my_port = 0;
    int lfd = make_listener(0, world_size, &my_port);
    int fd0 = connect_with_retry(rv.host, rv.port, options.connect_timeout_sec);
    std::uint8_t msg_hello[6] = {
        static_cast<std::uint8_t>(rank >> 24), static_cast<std::uint8_t>(rank >> 16),
        static_cast<std::uint8_t>(rank >> 8),  static_cast<std::uint8_t>(rank),
        static_cast<std::uint8_t>(my_port >> 8), static_cast<std::uint8_t>(my_port)};
    send_exact(fd0, msg_hello, sizeof(msg_hello));
    ep->adopt_peer(0, fd0);
    // Receive the address table for ranks 1..world-1.
    std::vector<std::uint8_t> blob(static_cast<std::size_t>(world_size - 1) * 10);
    recv_exact(fd0, blob.data(), blob.size());
    std::vector<PeerAddr> table(static_cast<std::size_t>(world_size));
    for (int i = 0; i < world_size - 1; ++i) {
      const std::uint8_t* p = blob.data() + static_cast<std::size_t>(i) * 10;
      const int r = static_cast<int>(get_u32(p));
      table[static_cast<std::size_t>(r)].ip = htonl(get_u32(p + 4));
      table[static_cast<std::size_t>(r)].port =
          static_cast<std::uint16_t>((p[8] << 8) | p[9]);
    }
    // Connect to every lower non-zero rank; accept from every higher rank.
    for (int r = 1; r < rank; ++r) {
      in_addr ia{};
      ia.s_addr = table[static_cast<std::size_t>(r)].ip;
      char ipstr[INET_ADDRSTRLEN];
      ::inet_ntop(AF_INET, &ia, ipstr, sizeof(ipstr));
      std::string host = ipstr;
      if (host == "0.0.0.0") host = rv.host;  // same-host shortcut
      int fd = connect_with_retry(host, table[static_cast<std::size_t>(r)].port,
                                  options.connect_timeout_sec);
      std::uint8_t hr[4] = {static_cast<std::uint8_t>(rank >> 24),
                            static_cast<std::uint8_t>(rank >> 16),
                            static_cast<std::uint8_t>(rank >> 8),
                            static_cast<std::uint8_t>(rank)};
      send_exact(fd, hr, sizeof(hr));
      ep->adopt_peer(r, fd);
    }
    for (int r = rank + 1; r < world_size; ++r) {
      sockaddr_in peer_addr{};
      socklen_t alen = sizeof(peer_addr);
      int cfd = ::accept(lfd, reinterpret_cast<sockaddr*>(&peer_addr), &alen);
      if (cfd < 0) sys_fail("accept");
      std::uint8_t hr[4];
      recv_exact(cfd, hr, sizeof(hr));
      const int peer_rank = static_cast<int>(get_u32(hr));
      if (peer_rank <= rank || peer_rank >= world_size) {
        ::close(cfd);
        throw TransportError(msg("mesh hello with bad rank ", peer_rank));
      }
      ep->adopt_peer(peer_rank, cfd);
    }
    ::close(lfd);
  }

  for (int p = 0; p < world_size; ++p) {
    if (p != rank && ep->peer_fds_[static_cast<std::size_t>(p)] < 0) {
      throw TransportError(msg("rank ", rank, ": mesh incomplete, no link to rank ", p));
    }
    if (p != rank) {
      int one = 1;
      ::setsockopt(ep->peer_fds_[static_cast<std::size_t>(p)], IPPROTO_TCP, TCP_NODELAY, &one,
                   sizeof(one));
    }
  }
  ep->start_readers();
  return ep;
}

}  // namespace laminar
