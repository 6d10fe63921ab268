#pragma once

// Teleoperation service. One operator connection at a time over TCP; each
// message is a JSON text either behind a 4-byte big-endian length prefix or,
// when the client opens with an HTTP upgrade, inside WebSocket text frames
// (browsers cannot open raw sockets).
//
// Threads per session:
//   reader     socket -> EventQueue (bounded, sheds stale jogs first)
//   control    sole owner of the Controller, one step per period
//   publisher  latest snapshot + error FIFO -> socket; a slow client only
//              ever loses snapshots, the control loop never waits on it
//
// Session time starts with the first inbound message. An input stamped t ms
// is applied at the first step whose time is >= t, so a client that stamps
// inputs on the control grid reproduces an in-process replay exactly.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include "toos/errors.hpp"
#include "toos/gateway/config.hpp"
#include "toos/gateway/io.hpp"
#include "toos/gateway/wire.hpp"
#include "toos/teleop.hpp"

namespace toos::gateway {

inline constexpr std::size_t kMaxFrameBytes = 1u << 20;

namespace net {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline bool read_exact(int fd, void* buf, std::size_t n) {
  auto* p = static_cast<char*>(buf);
  while (n > 0) {
    const ssize_t r = ::recv(fd, p, n, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

inline bool write_all(int fd, const void* buf, std::size_t n) {
  const auto* p = static_cast<const char*>(buf);
  while (n > 0) {
    const ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

inline std::string websocket_accept(const std::string& key) {
  const std::string src = key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

}  // namespace net

/// Message-oriented view of a connected socket.
class Connection {
 public:
  enum class Framing { length_prefixed, websocket };

  Connection(net::Fd fd, Framing framing) : fd_(std::move(fd)), framing_(framing) {}

  /// Server side: detects the framing from the first bytes and completes the
  /// WebSocket handshake when needed.
  static Connection accept_client(net::Fd fd) {
    char head[4];
    ssize_t got = 0;
    do {
      got = ::recv(fd.get(), head, sizeof head, MSG_PEEK | MSG_WAITALL);
    } while (got < 0 && errno == EINTR);
    if (got == 4 && std::memcmp(head, "GET ", 4) == 0) {
      std::string request;
      char c;
      while (request.size() < 8192 && request.find("\r\n\r\n") == std::string::npos) {
        if (!net::read_exact(fd.get(), &c, 1)) throw ProtocolError("connection closed during handshake");
        request.push_back(c);
      }
      std::string key;
      std::size_t pos = 0;
      while ((pos = request.find("\r\n", pos)) != std::string::npos) {
        pos += 2;
        const std::size_t colon = request.find(':', pos);
        const std::size_t eol = request.find("\r\n", pos);
        if (colon == std::string::npos || eol == std::string::npos || colon > eol) continue;
        std::string name = request.substr(pos, colon - pos);
        for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (name == "sec-websocket-key") {
          key = request.substr(colon + 1, eol - colon - 1);
          key.erase(0, key.find_first_not_of(' '));
          key.erase(key.find_last_not_of(' ') + 1);
        }
      }
      if (key.empty()) {
        const std::string resp = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
        net::write_all(fd.get(), resp.data(), resp.size());
        throw ProtocolError("HTTP request without WebSocket upgrade");
      }
      const std::string resp = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                               "Sec-WebSocket-Accept: " + net::websocket_accept(key) + "\r\n\r\n";
      if (!net::write_all(fd.get(), resp.data(), resp.size())) throw ProtocolError("handshake write failed");
      return Connection(std::move(fd), Framing::websocket);
    }
    return Connection(std::move(fd), Framing::length_prefixed);
  }

  Framing framing() const noexcept { return framing_; }
  int fd() const noexcept { return fd_.get(); }

  /// Blocks for the next message; nullopt when the peer closed.
  std::optional<std::string> read_message() {
    return framing_ == Framing::websocket ? read_websocket() : read_prefixed();
  }

  bool write_message(const std::string& text) {
    std::lock_guard lock(*write_mutex_);
    if (framing_ == Framing::length_prefixed) {
      const std::uint32_t n = htonl(static_cast<std::uint32_t>(text.size()));
      return net::write_all(fd_.get(), &n, 4) && net::write_all(fd_.get(), text.data(), text.size());
    }
    return write_ws_frame(0x1, text);
  }

  void shutdown() { ::shutdown(fd_.get(), SHUT_RDWR); }

  /// Waits up to `timeout` for readable data.
  bool wait_readable(std::chrono::milliseconds timeout) const {
    pollfd p{fd_.get(), POLLIN, 0};
    return ::poll(&p, 1, static_cast<int>(timeout.count())) > 0;
  }

 private:
  std::optional<std::string> read_prefixed() {
    std::uint32_t n = 0;
    if (!net::read_exact(fd_.get(), &n, 4)) return std::nullopt;
    n = ntohl(n);
    if (n > kMaxFrameBytes) throw ProtocolError(fmt::format("frame of {} bytes exceeds limit", n));
    std::string text(n, '\0');
    if (n > 0 && !net::read_exact(fd_.get(), text.data(), n)) return std::nullopt;
    return text;
  }

  std::optional<std::string> read_websocket() {
    std::string message;
    while (true) {
      unsigned char h[2];
      if (!net::read_exact(fd_.get(), h, 2)) return std::nullopt;
      const bool fin = h[0] & 0x80;
      const int opcode = h[0] & 0x0f;
      const bool masked = h[1] & 0x80;
      std::uint64_t len = h[1] & 0x7f;
      if (len == 126) {
        unsigned char e[2];
        if (!net::read_exact(fd_.get(), e, 2)) return std::nullopt;
        len = (std::uint64_t{e[0]} << 8) | e[1];
      } else if (len == 127) {
        unsigned char e[8];
        if (!net::read_exact(fd_.get(), e, 8)) return std::nullopt;
        len = 0;
        for (unsigned char b : e) len = (len << 8) | b;
      }
      if (len + message.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds limit");
      unsigned char mask[4] = {0, 0, 0, 0};
      if (masked && !net::read_exact(fd_.get(), mask, 4)) return std::nullopt;
      std::string data(static_cast<std::size_t>(len), '\0');
      if (len > 0 && !net::read_exact(fd_.get(), data.data(), data.size())) return std::nullopt;
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<char>(data[i] ^ mask[i % 4]);

      switch (opcode) {
        case 0x8: {
          std::lock_guard lock(*write_mutex_);
          write_ws_frame(0x8, "");
          return std::nullopt;
        }
        case 0x9: {
          std::lock_guard lock(*write_mutex_);
          write_ws_frame(0xA, data);
          continue;
        }
        case 0xA: continue;
        case 0x0:
        case 0x1:
        case 0x2:
          message += data;
          if (fin) return message;
          continue;
        default: throw ProtocolError("unsupported WebSocket opcode");
      }
    }
  }

  // Caller holds write_mutex_.
  bool write_ws_frame(int opcode, const std::string& data) {
    std::string frame;
    frame.push_back(static_cast<char>(0x80 | opcode));
    const std::uint64_t n = data.size();
    if (n < 126) {
      frame.push_back(static_cast<char>(n));
    } else if (n < 65536) {
      frame.push_back(126);
      frame.push_back(static_cast<char>(n >> 8));
      frame.push_back(static_cast<char>(n & 0xff));
    } else {
      frame.push_back(127);
      for (int s = 56; s >= 0; s -= 8) frame.push_back(static_cast<char>((n >> s) & 0xff));
    }
    frame += data;
    return net::write_all(fd_.get(), frame.data(), frame.size());
  }

  net::Fd fd_;
  Framing framing_;
  std::unique_ptr<std::mutex> write_mutex_ = std::make_unique<std::mutex>();
};

// ---------------------------------------------------------------------------

struct Inbound {
  std::uint64_t seq = 0;
  double t_ms = 0.0;
  teleop::Event event;
};

/// Bounded inbound queue. When full, the oldest jog is shed, then the oldest
/// master delta; triggers, pedals and phase events are never dropped.
class EventQueue {
 public:
  explicit EventQueue(std::size_t capacity = 64) : capacity_(capacity) {}

  void push(Inbound in) {
    std::lock_guard lock(mutex_);
    if (items_.size() >= capacity_ && !shed<teleop::Jog>()) shed<teleop::MasterDelta>();
    items_.push_back(std::move(in));
  }

  std::vector<Inbound> drain() {
    std::lock_guard lock(mutex_);
    std::vector<Inbound> out(std::make_move_iterator(items_.begin()), std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }

  std::size_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  template <class T>
  bool shed() {
    for (auto it = items_.begin(); it != items_.end(); ++it) {
      if (std::holds_alternative<T>(it->event)) {
        items_.erase(it);
        ++dropped_;
        return true;
      }
    }
    return false;
  }

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<Inbound> items_;
  std::size_t dropped_ = 0;
};

/// Hand-off between the control loop and the publisher thread.
class Outbox {
 public:
  struct Snapshot {
    double t_ms = 0.0;
    json state;
    json force;
  };

  void publish(Snapshot s) {
    {
      std::lock_guard lock(mutex_);
      if (latest_) ++superseded_;
      latest_ = std::move(s);
    }
    cv_.notify_one();
  }

  void error(double t_ms, json payload) {
    {
      std::lock_guard lock(mutex_);
      errors_.push_back({t_ms, std::move(payload)});
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_one();
  }

  /// Publisher loop body. Returns false once closed and drained.
  template <class Send>
  bool pump(Send&& send) {
    std::deque<std::pair<double, json>> errors;
    std::optional<Snapshot> snap;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return closed_ || latest_ || !errors_.empty(); });
      errors.swap(errors_);
      snap = std::exchange(latest_, std::nullopt);
      if (closed_ && errors.empty() && !snap) return false;
    }
    for (auto& [t, p] : errors) send("error", t, std::move(p));
    if (snap) {
      send("state_update", snap->t_ms, std::move(snap->state));
      send("force_echo", snap->t_ms, std::move(snap->force));
    }
    return true;
  }

  std::size_t superseded() const {
    std::lock_guard lock(mutex_);
    return superseded_;
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<Snapshot> latest_;
  std::deque<std::pair<double, json>> errors_;
  bool closed_ = false;
  std::size_t superseded_ = 0;
};

// ---------------------------------------------------------------------------

struct SessionSummary {
  std::vector<teleop::TraceEntry> trace;
  teleop::Phase final_phase = teleop::Phase::Prepare;
  bool aborted = false;  // connection lost before Done
  std::size_t steps = 0;
  std::size_t late_events = 0;     // applied after their stamped step
  std::size_t dropped_events = 0;  // shed by the inbound queue
  std::size_t dropped_frames = 0;  // snapshots superseded before sending
  std::size_t rejected = 0;
};

struct ServeOptions {
  int port = 7400;  // 0 picks a free port
  std::string bind_address = "127.0.0.1";
  std::size_t max_sessions = 0;  // 0 = serve until stopped
  double realtime_factor = 1.0;
  std::optional<fs::path> trace_path;  // defaults to the config's trace path
  std::size_t queue_capacity = 64;
  std::function<void(int)> on_listening;
  std::function<void(const SessionSummary&)> on_session_end;
  const std::atomic<bool>* stop = nullptr;
  bool verbose = false;
};

namespace detail {

inline std::uint64_t step_of(double t_ms, double dt) {
  const double steps = t_ms / (dt * 1000.0);
  return static_cast<std::uint64_t>(std::max(0.0, std::ceil(steps - 1e-6)));
}

inline SessionSummary run_session(Connection& conn, const RunConfig& cfg, const ServeOptions& opt) {
  using clock = std::chrono::steady_clock;
  teleop::Controller ctrl(cfg.runtime_context());
  EventQueue queue(opt.queue_capacity);
  Outbox outbox;
  std::atomic<bool> disconnected{false};
  std::atomic<bool> started{false};
  std::mutex start_mutex;
  std::condition_variable start_cv;
  std::atomic<double> now_ms{0.0};

  auto mark_started = [&] {
    if (!started.exchange(true)) {
      std::lock_guard lock(start_mutex);
      start_cv.notify_all();
    }
  };

  std::thread reader([&] {
    std::optional<std::uint64_t> last_seq;
    while (true) {
      std::optional<std::string> text;
      try {
        text = conn.read_message();
      } catch (const ProtocolError& e) {
        outbox.error(now_ms.load(), error_payload(e.what()));
        break;
      }
      if (!text) break;
      Message m;
      try {
        m = decode(*text);
      } catch (const VersionMismatch& e) {
        outbox.error(now_ms.load(), error_payload(e.what()));
        break;
      } catch (const ProtocolError& e) {
        outbox.error(now_ms.load(), error_payload(e.what()));
        continue;
      }
      if (last_seq && m.seq <= *last_seq) {
        outbox.error(now_ms.load(), error_payload("seq must increase", m.seq));
        continue;
      }
      last_seq = m.seq;
      try {
        queue.push({m.seq, m.t_ms, to_event(m)});
      } catch (const ProtocolError& e) {
        outbox.error(now_ms.load(), error_payload(e.what(), m.seq));
      }
      mark_started();
    }
    disconnected = true;
    mark_started();
  });

  std::thread publisher([&] {
    std::uint64_t seq = 0;
    bool ok = true;
    auto send = [&](const char* kind, double t, json payload) {
      if (!ok) return;
      Message m;
      m.kind = kind;
      m.seq = seq++;
      m.t_ms = t;
      m.payload = std::move(payload);
      ok = conn.write_message(encode(m));
      if (!ok) conn.shutdown();
    };
    while (outbox.pump(send)) {
    }
  });

  const auto should_stop = [&] { return opt.stop && opt.stop->load(); };
  {
    std::unique_lock lock(start_mutex);
    while (!started && !should_stop()) start_cv.wait_for(lock, std::chrono::milliseconds(50));
  }

  SessionSummary sum;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(cfg.dt / opt.realtime_factor));
  const auto t0 = clock::now();
  std::vector<Inbound> pending;
  for (std::uint64_t k = 0; !should_stop(); ++k) {
    // step k closes one period after its nominal time so inputs stamped for
    // it have that long to arrive
    std::this_thread::sleep_until(t0 + static_cast<long>(k + 1) * period);
    const double t_ms = static_cast<double>(k) * cfg.dt * 1000.0;
    now_ms = t_ms;
    for (auto& in : queue.drain()) pending.push_back(std::move(in));

    std::vector<teleop::Event> batch;
    std::vector<std::uint64_t> seqs;
    std::vector<Inbound> later;
    for (auto& in : pending) {
      const std::uint64_t due = step_of(in.t_ms, cfg.dt);
      if (due > k) {
        later.push_back(std::move(in));
        continue;
      }
      if (due < k) ++sum.late_events;
      seqs.push_back(in.seq);
      batch.push_back(std::move(in.event));
    }
    pending = std::move(later);

    if (!ctrl.state().finished) {
      for (const auto& r : ctrl.step(batch)) {
        ++sum.rejected;
        outbox.error(t_ms, error_payload(r.message, seqs[r.index]));
      }
      ++sum.steps;
    } else {
      for (auto s : seqs) outbox.error(t_ms, error_payload("session finished", s));
    }
    outbox.publish({t_ms, state_payload(ctrl.state(), cfg), force_payload(ctrl.state(), cfg.f_safety)});
    if (disconnected) break;
  }

  if (!ctrl.state().finished && ctrl.state().phase != teleop::Phase::LockAndHome) {
    ctrl.step({teleop::PhaseEvent{teleop::PhaseCommand::abort}});
    sum.aborted = true;
  }
  outbox.close();
  conn.shutdown();
  reader.join();
  publisher.join();

  sum.trace = ctrl.state().trace;
  sum.final_phase = ctrl.state().phase;
  sum.dropped_events = queue.dropped();
  sum.dropped_frames = outbox.superseded();
  return sum;
}

}  // namespace detail

/// Listens, serves sessions one at a time and writes each session's trace
/// when its connection ends. Returns the number of sessions served.
inline std::size_t serve(const RunConfig& cfg, const ServeOptions& opt) {
  if (!(opt.realtime_factor > 0.0)) throw ConfigError("realtime factor must be > 0");
  net::Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener) throw Error(fmt::format("socket: {}", std::strerror(errno)));
  const int yes = 1;
  ::setsockopt(listener.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(opt.port));
  if (::inet_pton(AF_INET, opt.bind_address.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("bad bind address '" + opt.bind_address + "'");
  if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw Error(fmt::format("bind port {}: {}", opt.port, std::strerror(errno)));
  if (::listen(listener.get(), 4) != 0) throw Error(fmt::format("listen: {}", std::strerror(errno)));
  socklen_t len = sizeof addr;
  ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  if (opt.verbose) fmt::print(stderr, "listening on {}:{}\n", opt.bind_address, port);
  if (opt.on_listening) opt.on_listening(port);

  const fs::path trace_path = opt.trace_path.value_or(cfg.trace_path);
  std::size_t served = 0;
  while (!(opt.stop && opt.stop->load()) && (opt.max_sessions == 0 || served < opt.max_sessions)) {
    pollfd p{listener.get(), POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    net::Fd client(::accept(listener.get(), nullptr, nullptr));
    if (!client) continue;
    ::setsockopt(client.get(), IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
    std::optional<Connection> conn;
    try {
      conn.emplace(Connection::accept_client(std::move(client)));
    } catch (const ProtocolError& e) {
      if (opt.verbose) fmt::print(stderr, "rejected connection: {}\n", e.what());
      continue;
    }
    if (opt.verbose) fmt::print(stderr, "operator connected\n");
    const SessionSummary sum = detail::run_session(*conn, cfg, opt);
    save_trace(trace_path, sum.trace);
    ++served;
    if (opt.verbose)
      fmt::print(stderr, "session ended in {} after {} steps ({} rejected, {} late, {} frames dropped), trace {}\n",
                 teleop::to_string(sum.final_phase), sum.steps, sum.rejected, sum.late_events, sum.dropped_frames,
                 trace_path.string());
    if (opt.on_session_end) opt.on_session_end(sum);
  }
  return served;
}

// ---------------------------------------------------------------------------

/// Length-prefixed client, used by tests and the scripted wire driver.
class WireClient {
 public:
  static WireClient connect(const std::string& host, int port) {
    net::Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd) throw Error("socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw ConfigError("bad host '" + host + "'");
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error(fmt::format("connect {}:{}: {}", host, port, std::strerror(errno)));
    const int yes = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
    return WireClient(Connection(std::move(fd), Connection::Framing::length_prefixed));
  }

  std::uint64_t send(Message m) {
    m.seq = next_seq_++;
    send_raw(encode(m));
    return m.seq;
  }

  void send_raw(const std::string& text) {
    if (!conn_.write_message(text)) throw Error("send failed");
  }

  /// Next message, or nullopt on timeout or close.
  std::optional<Message> receive(std::chrono::milliseconds timeout) {
    if (!conn_.wait_readable(timeout)) return std::nullopt;
    auto text = conn_.read_message();
    if (!text) {
      closed_ = true;
      return std::nullopt;
    }
    return decode(*text);
  }

  bool closed() const noexcept { return closed_; }
  void close() { conn_.shutdown(); }

 private:
  explicit WireClient(Connection c) : conn_(std::move(c)) {}

  Connection conn_;
  std::uint64_t next_seq_ = 0;
  bool closed_ = false;
};

/// Streams a trajectory to a running service, stamping each input with its
/// step time and staying at most `lead` steps ahead of the published state.
/// Returns once the session reports finished (or the stream ends).
inline std::vector<Message> drive_trajectory(WireClient& client, const Trajectory& traj, std::uint64_t lead = 5,
                                             std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
  std::vector<Message> errors;
  std::int64_t seen = -1;
  bool finished = false;
  auto pump = [&](std::chrono::milliseconds wait) {
    auto m = client.receive(wait);
    if (!m) return false;
    if (m->kind == "state_update") {
      seen = std::max<std::int64_t>(seen, m->payload.at("step").get<std::int64_t>());
      finished = m->payload.at("finished").get<bool>();
    } else if (m->kind == "error") {
      errors.push_back(*m);
    }
    return true;
  };

  for (const auto& [step, events] : traj.steps) {
    while (static_cast<std::int64_t>(step) > seen + static_cast<std::int64_t>(lead) && step >= lead) {
      if (!pump(timeout)) throw Error(fmt::format("no state_update while waiting to send step {}", step));
    }
    for (const auto& e : events) {
      Message m = to_message(e);
      m.t_ms = static_cast<double>(step) * traj.dt * 1000.0;
      client.send(std::move(m));
    }
  }
  while (!finished && static_cast<std::uint64_t>(std::max<std::int64_t>(seen, 0)) <= traj.last_step()) {
    if (!pump(timeout)) break;
  }
  while (pump(std::chrono::milliseconds(0))) {
  }
  return errors;
}

}  // namespace toos::gateway
