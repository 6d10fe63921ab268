#include <chrono>
#include <filesystem>
#include <future>
#include <thread>

#include <gtest/gtest.h>
#include <unistd.h>

#include "support/generators.hpp"
#include "toos/gateway/replay.hpp"
#include "toos/gateway/scenario.hpp"
#include "toos/gateway/server.hpp"
#include "toos/gateway/wire.hpp"

using namespace toos;
using namespace toos::gateway;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

const RunConfig& config() {
  static const RunConfig cfg = load_config(fs::path(TOOS_DATA_DIR) / "default.ini");
  return cfg;
}

Message msg(const std::string& kind, json payload = json::object(), double t_ms = 0.0) {
  Message m;
  m.kind = kind;
  m.t_ms = t_ms;
  m.payload = std::move(payload);
  return m;
}

// One-session server on an ephemeral port, joined on destruction.
class LiveServer {
 public:
  explicit LiveServer(double realtime_factor = 8.0, const RunConfig& cfg = config()) {
    trace_ = fs::temp_directory_path() / fmt::format("toos_wire_test_{}_{}.csv", ::getpid(), counter_++);
    opt_.port = 0;
    opt_.max_sessions = 1;
    opt_.realtime_factor = realtime_factor;
    opt_.trace_path = trace_;
    opt_.on_listening = [this](int p) { port_.set_value(p); };
    opt_.on_session_end = [this](const SessionSummary& s) { summary_ = s; };
    thread_ = std::thread([this, &cfg] {
      try {
        serve(cfg, opt_);
      } catch (...) {
        error_ = std::current_exception();
        try {
          port_.set_value(-1);
        } catch (...) {
        }
      }
    });
    port_number_ = port_.get_future().get();
  }

  ~LiveServer() {
    if (thread_.joinable()) thread_.join();
    fs::remove(trace_);
  }

  int port() const { return port_number_; }

  // Waits for the session to end and returns its summary.
  const SessionSummary& finish() {
    thread_.join();
    if (error_) std::rethrow_exception(error_);
    return summary_;
  }

  const fs::path& trace_path() const { return trace_; }

 private:
  static inline int counter_ = 0;
  ServeOptions opt_;
  fs::path trace_;
  std::promise<int> port_;
  int port_number_ = -1;
  std::thread thread_;
  std::exception_ptr error_;
  SessionSummary summary_;
};

// Reads until a message of `kind` arrives (optionally matching `pred`).
std::optional<Message> await(WireClient& c, const std::string& kind,
                             const std::function<bool(const Message&)>& pred = nullptr,
                             std::chrono::milliseconds timeout = 5s) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto m = c.receive(100ms);
    if (c.closed()) return std::nullopt;
    if (m && m->kind == kind && (!pred || pred(*m))) return m;
  }
  return std::nullopt;
}

// Minimal browser-style client: HTTP upgrade, masked text frames out,
// unmasked frames in.
class WsClient {
 public:
  explicit WsClient(int port) : fd_(::socket(AF_INET, SOCK_STREAM, 0)) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    if (::connect(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) throw Error("connect failed");
  }

  std::string handshake(const std::string& key = "dGhlIHNhbXBsZSBub25jZQ==") {
    const std::string req = "GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
                            "Connection: Upgrade\r\nSec-WebSocket-Key: " + key +
                            "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    net::write_all(fd_.get(), req.data(), req.size());
    std::string resp;
    char ch;
    while (resp.find("\r\n\r\n") == std::string::npos && net::read_exact(fd_.get(), &ch, 1)) resp.push_back(ch);
    return resp;
  }

  void send_text(const std::string& text) {
    std::string frame;
    frame.push_back(static_cast<char>(0x81));
    const unsigned char mask[4] = {0x12, 0x34, 0x56, 0x78};
    if (text.size() < 126) {
      frame.push_back(static_cast<char>(0x80 | text.size()));
    } else {
      frame.push_back(static_cast<char>(0x80 | 126));
      frame.push_back(static_cast<char>(text.size() >> 8));
      frame.push_back(static_cast<char>(text.size() & 0xff));
    }
    frame.append(reinterpret_cast<const char*>(mask), 4);
    for (std::size_t i = 0; i < text.size(); ++i) frame.push_back(static_cast<char>(text[i] ^ mask[i % 4]));
    net::write_all(fd_.get(), frame.data(), frame.size());
  }

  std::uint64_t send(Message m) {
    m.seq = seq_++;
    send_text(encode(m));
    return m.seq;
  }

  std::optional<std::string> read_text(std::chrono::milliseconds timeout) {
    pollfd p{fd_.get(), POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return std::nullopt;
    unsigned char h[2];
    if (!net::read_exact(fd_.get(), h, 2)) return std::nullopt;
    EXPECT_EQ(h[1] & 0x80, 0) << "server frames must not be masked";
    std::uint64_t len = h[1] & 0x7f;
    if (len == 126) {
      unsigned char e[2];
      net::read_exact(fd_.get(), e, 2);
      len = (std::uint64_t{e[0]} << 8) | e[1];
    } else if (len == 127) {
      unsigned char e[8];
      net::read_exact(fd_.get(), e, 8);
      len = 0;
      for (unsigned char b : e) len = (len << 8) | b;
    }
    std::string data(len, '\0');
    if (len > 0) net::read_exact(fd_.get(), data.data(), len);
    return data;
  }

  void close() { ::shutdown(fd_.get(), SHUT_RDWR); }

 private:
  net::Fd fd_;
  std::uint64_t seq_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Message codec

TEST(Wire, EncodeDecodeRoundTrip) {
  Message m = msg("master_delta", {{"dx", 0.1}, {"dy", -2.5}, {"dz", 1.0 / 3.0}}, 120.0);
  m.seq = 42;
  const auto back = decode(encode(m));
  EXPECT_EQ(back.v, 1);
  EXPECT_EQ(back.kind, "master_delta");
  EXPECT_EQ(back.seq, 42u);
  EXPECT_EQ(back.t_ms, 120.0);
  EXPECT_EQ(back.payload, m.payload);
}

TEST(Wire, DoublesSurviveEncoding) {
  test::for_all(500, 61, [](test::Gen& gen) {
    const double x = gen.uniform(-1e3, 1e3) * std::pow(10.0, gen.integer(-12, 6));
    Message m = msg("set_pressure", {{"kpa", x}}, std::abs(x));
    EXPECT_EQ(decode(encode(m)).payload["kpa"].get<double>(), x);
    EXPECT_EQ(decode(encode(m)).t_ms, std::abs(x));
  });
}

TEST(Wire, VersionMismatch) {
  EXPECT_THROW(decode(R"({"v":2,"kind":"pedal","seq":0,"t":0,"payload":{}})"), VersionMismatch);
}

TEST(Wire, RejectsMalformedMessages) {
  for (const char* text : {
           "not json",
           "[1,2]",
           R"({"kind":"pedal","seq":0})",
           R"({"v":1,"kind":"wiggle","seq":0})",
           R"({"v":1,"kind":"pedal","seq":-1})",
           R"({"v":1,"kind":"pedal","seq":1.5})",
           R"({"v":1,"kind":"pedal","seq":0,"t":-4})",
           R"({"v":1,"kind":"pedal","seq":0,"payload":[]})",
       }) {
    EXPECT_THROW(decode(text), ProtocolError) << text;
  }
  EXPECT_NO_THROW(decode(R"({"v":1,"kind":"pedal","seq":0})"));
}

TEST(Wire, BadPayloadsAreProtocolErrors) {
  EXPECT_THROW(to_event(msg("master_delta", {{"dx", 1}, {"dy", 2}})), ProtocolError);
  EXPECT_THROW(to_event(msg("jog", {{"joint", "j7"}, {"delta", 1}})), ProtocolError);
  EXPECT_THROW(to_event(msg("phase_event", {{"event", "finish"}})), ProtocolError);
  EXPECT_THROW(to_event(msg("trigger", {{"enable", 1}})), ProtocolError);
  EXPECT_THROW(to_event(msg("set_pressure", {{"kpa", "high"}})), ProtocolError);
  EXPECT_THROW(to_event(msg("state_update")), ProtocolError);
  EXPECT_TRUE(std::get<teleop::Trigger>(to_event(msg("trigger"))).enable);
}

TEST(Wire, EventMessageRoundTrip) {
  using namespace teleop;
  const std::vector<Event> events{
      MasterDelta{{1.5, -2, 0.25}},     Trigger{false},     Pedal{},
      Jog{Joint::j2, -3.5},             SetPressure{45},    SetVfDiameter{35},
      SetScale{4},                      PhaseEvent{PhaseCommand::lock},
  };
  for (const auto& e : events) {
    Message m = to_message(e);
    const auto back = to_event(decode(encode(m)));
    ASSERT_EQ(back.index(), e.index()) << m.kind;
    EXPECT_EQ(to_message(back).payload, m.payload) << m.kind;
  }
}

TEST(Wire, StatePayloadDescribesScene) {
  teleop::Controller c(config().runtime_context());
  c.step({teleop::PhaseEvent{teleop::PhaseCommand::start}});
  const json p = state_payload(c.state(), config());
  EXPECT_EQ(p["step"], 0);
  EXPECT_EQ(p["phase"], "SwabMount");
  EXPECT_EQ(p["gripper"], "open");
  EXPECT_EQ(p["vf"]["enabled"], false);
  EXPECT_DOUBLE_EQ(p["phantom"]["z_throat"].get<double>(), 205.0);
  EXPECT_EQ(p["cables"].size(), 3u);
  const json f = force_payload(c.state(), 0.588);
  EXPECT_EQ(f["magnitude"], 0.0);
  EXPECT_TRUE(f["active"].empty());
}

// ---------------------------------------------------------------------------
// Queues

TEST(EventQueue, ShedsJogsBeforeMasterDeltasAndNeverControlEvents) {
  EventQueue q(4);
  q.push({0, 0, teleop::Trigger{}});
  q.push({1, 0, teleop::MasterDelta{}});
  q.push({2, 0, teleop::Jog{teleop::Joint::j1, 1}});
  q.push({3, 0, teleop::Pedal{}});
  q.push({4, 0, teleop::PhaseEvent{teleop::PhaseCommand::next}});  // sheds the jog
  q.push({5, 0, teleop::Pedal{}});                                 // sheds the master delta
  q.push({6, 0, teleop::Trigger{}});                               // nothing left to shed
  EXPECT_EQ(q.dropped(), 2u);
  std::vector<std::uint64_t> seqs;
  for (const auto& in : q.drain()) seqs.push_back(in.seq);
  EXPECT_EQ(seqs, (std::vector<std::uint64_t>{0, 3, 4, 5, 6}));
  EXPECT_EQ(q.size(), 0u);
}

TEST(Outbox, KeepsLatestSnapshotAndEveryError) {
  Outbox box;
  box.publish({0, {{"n", 0}}, {}});
  box.error(0, error_payload("a"));
  box.publish({40, {{"n", 1}}, {}});
  box.error(40, error_payload("b", 7));
  std::vector<std::string> kinds;
  std::vector<json> payloads;
  EXPECT_TRUE(box.pump([&](const char* k, double, json p) {
    kinds.emplace_back(k);
    payloads.push_back(std::move(p));
  }));
  EXPECT_EQ(kinds, (std::vector<std::string>{"error", "error", "state_update", "force_echo"}));
  EXPECT_EQ(payloads[1]["ref_seq"], 7);
  EXPECT_EQ(payloads[2]["n"], 1);
  EXPECT_EQ(box.superseded(), 1u);
  box.close();
  EXPECT_FALSE(box.pump([](const char*, double, json) {}));
}

TEST(Server, StepOfRoundsUpToTheControlGrid) {
  EXPECT_EQ(detail::step_of(0, 0.04), 0u);
  EXPECT_EQ(detail::step_of(40, 0.04), 1u);
  EXPECT_EQ(detail::step_of(40.5, 0.04), 2u);
  EXPECT_EQ(detail::step_of(39.9, 0.04), 1u);
  test::for_all(200, 62, [](test::Gen& gen) {
    const auto k = static_cast<std::uint64_t>(gen.integer(0, 100000));
    EXPECT_EQ(detail::step_of(static_cast<double>(k) * 0.04 * 1000.0, 0.04), k);
  });
}

// ---------------------------------------------------------------------------
// Live service

TEST(Server, StartReportsSwabMount) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send(msg("phase_event", {{"event", "start"}}));
  const auto s = await(c, "state_update", [](const Message& m) { return m.payload["phase"] == "SwabMount"; });
  ASSERT_TRUE(s);
  EXPECT_EQ(s->payload["gripper"], "open");
  ASSERT_TRUE(await(c, "force_echo"));
  c.close();
  const auto& sum = srv.finish();
  EXPECT_TRUE(sum.aborted);
  EXPECT_EQ(sum.final_phase, teleop::Phase::LockAndHome);
  EXPECT_TRUE(fs::exists(srv.trace_path()));
}

TEST(Server, OutOfRangeFixtureDiameterIsRejectedWithSeq) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send(msg("phase_event", {{"event", "start"}}));
  const auto bad = c.send(msg("set_vf_radius", {{"diameter_mm", 15}}));
  const auto good = c.send(msg("set_vf_radius", {{"diameter_mm", 35}}));
  const auto err = await(c, "error");
  ASSERT_TRUE(err);
  EXPECT_EQ(err->payload["ref_seq"], bad);
  const auto s = await(c, "state_update", [](const Message& m) { return m.payload["vf"]["diameter_mm"] == 35.0; });
  ASSERT_TRUE(s);
  EXPECT_NE(bad, good);
  c.close();
  EXPECT_EQ(srv.finish().rejected, 1u);
}

TEST(Server, MalformedInputLeavesSessionRunning) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send_raw("{\"v\":1,");
  const auto err = await(c, "error");
  ASSERT_TRUE(err);
  EXPECT_NE(err->payload["message"].get<std::string>().find("malformed"), std::string::npos);
  c.send(msg("phase_event", {{"event", "start"}}));
  EXPECT_TRUE(await(c, "state_update", [](const Message& m) { return m.payload["phase"] == "SwabMount"; }));
  c.close();
  srv.finish();
}

TEST(Server, NonIncreasingSeqIsRejected) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send_raw(R"({"v":1,"kind":"phase_event","seq":5,"t":0,"payload":{"event":"start"}})");
  c.send_raw(R"({"v":1,"kind":"pedal","seq":5,"t":0,"payload":{}})");
  const auto err = await(c, "error");
  ASSERT_TRUE(err);
  EXPECT_EQ(err->payload["ref_seq"], 5);
  c.close();
  srv.finish();
}

TEST(Server, VersionMismatchClosesConnection) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send_raw(R"({"v":2,"kind":"pedal","seq":0,"t":0,"payload":{}})");
  const auto err = await(c, "error");
  ASSERT_TRUE(err);
  EXPECT_NE(err->payload["message"].get<std::string>().find("version"), std::string::npos);
  const auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!c.closed() && std::chrono::steady_clock::now() < deadline) (void)c.receive(100ms);
  EXPECT_TRUE(c.closed());
  srv.finish();
}

TEST(Server, DisconnectMidProcedureAbortsToLockAndHome) {
  LiveServer srv;
  auto c = WireClient::connect("127.0.0.1", srv.port());
  c.send(msg("phase_event", {{"event", "start"}}));
  c.send(msg("pedal"));
  ASSERT_TRUE(await(c, "state_update"));
  c.close();
  const auto& sum = srv.finish();
  EXPECT_TRUE(sum.aborted);
  EXPECT_EQ(sum.final_phase, teleop::Phase::LockAndHome);
  const auto rows = load_trace(srv.trace_path());
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows.back().phase, "LockAndHome");
}

// Wire and in-process runs of the same scripted session must agree exactly.
TEST(Server, LengthPrefixedSessionMatchesReplay) {
  ScenarioOptions so;
  so.seed = 7;
  const auto sc = make_scenario(config(), so);
  RunConfig local = config();
  local.phantom = sc.phantom;
  const auto expected = replay(sc.trajectory, local);

  LiveServer srv(3.0, local);  // generous period: exact agreement needs inputs on time
  {
    auto c = WireClient::connect("127.0.0.1", srv.port());
    const auto errors = drive_trajectory(c, sc.trajectory, 25);
    EXPECT_EQ(errors.size(), expected.rejected.size());
    c.close();
  }
  const auto& sum = srv.finish();
  EXPECT_EQ(sum.late_events, 0u);
  EXPECT_EQ(sum.dropped_events, 0u);
  std::stringstream ss;
  write_trace(ss, expected.trace);
  EXPECT_EQ(trace_difference(parse_trace(ss), load_trace(srv.trace_path())), 0.0);
}

TEST(Server, WebSocketUpgradeAndFrames) {
  LiveServer srv;
  WsClient ws(srv.port());
  const std::string resp = ws.handshake();
  EXPECT_EQ(resp.rfind("HTTP/1.1 101", 0), 0u) << resp;
  // RFC 6455 sample key and its expected accept value
  EXPECT_NE(resp.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos) << resp;

  ws.send(msg("phase_event", {{"event", "start"}}));
  bool saw_mount = false;
  const auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!saw_mount && std::chrono::steady_clock::now() < deadline) {
    const auto text = ws.read_text(200ms);
    if (!text) continue;
    const auto m = decode(*text);
    saw_mount = m.kind == "state_update" && m.payload["phase"] == "SwabMount";
  }
  EXPECT_TRUE(saw_mount);
  ws.close();
  EXPECT_TRUE(srv.finish().aborted);
}

TEST(Server, PlainHttpWithoutUpgradeIsRefused) {
  ServeOptions opt;
  opt.port = 0;
  opt.max_sessions = 1;
  std::atomic<bool> stop{false};
  opt.stop = &stop;
  std::promise<int> port;
  opt.on_listening = [&](int p) { port.set_value(p); };
  std::size_t served = 99;
  std::thread t([&] { served = serve(config(), opt); });
  const int p = port.get_future().get();
  // a connection that speaks HTTP without a key gets 400 and no session
  WsClient c(p);
  const std::string resp = c.handshake("");
  EXPECT_NE(resp.find("400"), std::string::npos) << resp;
  stop = true;
  t.join();
  EXPECT_EQ(served, 0u);
}
