#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <regex>
#include <thread>

#include <gtest/gtest.h>

#include "urbannav/error.h"
#include "urbannav/iql.h"
#include "urbannav/io.h"
#include "urbannav/replay.h"
#include "urbannav/teleop.h"

namespace urbannav {
namespace {

// Scene refs look like "<kind>-<seed>"; pedestrians are disabled so that
// straight drives are collision-free.
Scene SceneFor(const std::string& ref) {
  const auto dash = ref.rfind('-');
  if (dash == std::string::npos) throw Error("unknown scene " + ref);
  Difficulty d;
  d.pedestrians = 0;
  return GenerateScene(std::stoull(ref.substr(dash + 1)), SceneKindFromString(ref.substr(0, dash)),
                       d);
}

class TeleopTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("urbannav-teleop-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    options_.out_dir = dir_;
  }
  void TearDown() override { fs::remove_all(dir_); }

  TeleopSession Session() { return TeleopSession(SceneFor, options_); }

  static void Begin(TeleopSession& s, const std::string& scene, int seed = 7) {
    ASSERT_EQ(s.HandleLine("hello version=1").at(0), "hello version=1");
    const auto r = s.HandleLine("episode_begin scene=" + scene + " seed=" + std::to_string(seed));
    ASSERT_EQ(r.size(), 2u);
    ASSERT_EQ(r[0].rfind("ack op=episode_begin ok=1", 0), 0u) << r[0];
    ASSERT_EQ(r[1].rfind("state tick=0 ", 0), 0u) << r[1];
  }

  fs::path dir_;
  TeleopOptions options_;
};

std::int64_t StateTick(const std::string& line) {
  std::smatch m;
  if (!std::regex_search(line, m, std::regex("^state tick=(\\d+) "))) return -1;
  return std::stoll(m[1]);
}

bool StateCollision(const std::string& line) {
  return std::regex_search(line, std::regex(" terms=[^,]+,1,"));
}

TEST_F(TeleopTest, HelloRequiredAndVersionChecked) {
  TeleopSession s = Session();
  EXPECT_EQ(s.HandleLine("episode_begin scene=straight-1 seed=1").at(0),
            "ack op=episode_begin ok=0 reason=hello-required");
  EXPECT_EQ(s.HandleLine("hello version=9").at(0), "ack op=hello ok=0 reason=unsupported-version");
  EXPECT_EQ(s.HandleLine("hello version=1").at(0), "hello version=1");
  EXPECT_EQ(s.HandleLine("episode_begin scene=nowhere seed=1").at(0),
            "ack op=episode_begin ok=0 reason=unknown-scene");
  EXPECT_EQ(s.HandleLine("control v=1").at(0), "ack op=control ok=0 reason=no-episode");
  EXPECT_EQ(s.HandleLine("garbage =").at(0), "ack op=unknown ok=0 reason=malformed");
}

TEST_F(TeleopTest, NoControlHoldsStill) {
  TeleopSession s = Session();
  Begin(s, "straight-1");
  const Scene scene = SceneFor("straight-1");
  std::vector<std::string> last;
  for (int i = 0; i < 20; ++i) last = s.Tick();
  ASSERT_FALSE(last.empty());
  EXPECT_EQ(StateTick(last[0]), 20);
  EXPECT_NE(last[0].find(" speed=0 "), std::string::npos) << last[0];
  const std::string pose = " pose=" + FormatDouble(scene.spawn.x) + "," +
                           FormatDouble(scene.spawn.y) + "," + FormatDouble(scene.spawn.theta);
  EXPECT_NE(last[0].find(pose), std::string::npos) << last[0];
}

TEST_F(TeleopTest, StateTicksStrictlyIncrease) {
  TeleopSession s = Session();
  Begin(s, "L-2");
  s.HandleLine("control v=1.0 omega=0.1");
  std::int64_t prev = 0;
  for (int i = 0; i < 40 && s.active(); ++i) {
    const auto lines = s.Tick();
    const std::int64_t t = StateTick(lines.at(0));
    EXPECT_GT(t, prev);
    prev = t;
  }
}

TEST_F(TeleopTest, ScriptedDriveReplaysExactly) {
  TeleopSession s = Session();
  Begin(s, "straight-3");
  s.HandleLine("control v=1.2 omega=0");
  for (int i = 0; i < 30; ++i) s.Tick();
  s.HandleLine("control v=0.8 omega=0.05");
  for (int i = 0; i < 30; ++i) s.Tick();
  const auto end = s.HandleLine("episode_end reason=done");
  ASSERT_EQ(end.size(), 1u);
  EXPECT_NE(end[0].find("saved=1"), std::string::npos) << end[0];
  ASSERT_EQ(s.saved().size(), 1u);

  const EpisodeRecord e = LoadEpisode(s.saved()[0]);
  EXPECT_EQ(e.header.source, EpisodeSource::kTeleop);
  EXPECT_EQ(e.steps.size(), 60u);
  EXPECT_EQ(e.footer.terminal, EventKind::kAborted);
  EXPECT_FALSE(e.footer.partial);
  for (const auto& st : e.steps) EXPECT_EQ(st.reward_terms.collision, 0);
  const ReplayReport r = Replay(SceneFor("straight-3"), e);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST_F(TeleopTest, ManualCollisionCostsExactlyOne) {
  TeleopSession base = Session();
  TeleopSession marked = Session();
  // Distinct seeds give distinct episode files.
  Begin(base, "straight-4", 1);
  Begin(marked, "straight-4", 2);
  for (auto* s : {&base, &marked}) {
    s->HandleLine("control v=1.0 omega=0");
    for (int i = 0; i < 25; ++i) s->Tick();
  }
  EXPECT_EQ(marked.HandleLine("annotate kind=collision tick=10").at(0),
            "ack op=annotate ok=1 tick=10");
  base.HandleLine("episode_end reason=done");
  marked.HandleLine("episode_end reason=done");

  const EpisodeRecord a = LoadEpisode(base.saved().at(0));
  const EpisodeRecord b = LoadEpisode(marked.saved().at(0));
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const double diff = Reward(b.steps[i].reward_terms) - Reward(a.steps[i].reward_terms);
    // The step that produced tick 10 is recorded at tick 9.
    if (a.steps[i].tick == 9) {
      EXPECT_EQ(diff, -1.0);
      EXPECT_EQ(b.steps[i].reward_terms.collision, 1);
    } else {
      EXPECT_EQ(diff, 0.0) << "step " << i;
    }
  }
  EXPECT_TRUE(Replay(SceneFor("straight-4"), b).ok);
}

TEST_F(TeleopTest, ClearRemovesOnlyManualMarks) {
  TeleopSession s = Session();
  Begin(s, "straight-5");
  s.HandleLine("control v=1.0 omega=0");
  for (int i = 0; i < 20; ++i) s.Tick();
  s.HandleLine("annotate kind=deviation tick=5");
  s.HandleLine("annotate kind=collision tick=6");
  EXPECT_EQ(s.HandleLine("annotate kind=clear tick=6").at(0), "ack op=annotate ok=1 tick=6");
  s.HandleLine("episode_end reason=done");
  const EpisodeRecord e = LoadEpisode(s.saved().at(0));
  EXPECT_EQ(e.steps[4].reward_terms.deviation, 1);
  EXPECT_EQ(e.steps[5].reward_terms, e.steps[6].reward_terms);
  EXPECT_EQ(e.steps[5].reward_terms.collision, 0);
}

TEST_F(TeleopTest, ClearDoesNotEraseAutoCollision) {
  // Drive at an obstacle course until the simulator itself reports a contact.
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::string ref = "obstacle_course-" + std::to_string(seed);
    TeleopSession s = Session();
    Begin(s, ref);
    s.HandleLine("control v=1.5 omega=0");
    std::int64_t hit = -1;
    for (int i = 0; i < 300 && s.active() && hit < 0; ++i) {
      const auto lines = s.Tick();
      if (StateCollision(lines.at(0))) hit = StateTick(lines[0]);
    }
    if (hit < 0 || !s.active()) continue;
    EXPECT_EQ(s.HandleLine("annotate kind=clear tick=" + std::to_string(hit)).at(0),
              "ack op=annotate ok=1 tick=" + std::to_string(hit));
    s.HandleLine("episode_end reason=done");
    const EpisodeRecord e = LoadEpisode(s.saved().at(0));
    EXPECT_EQ(e.steps.at(static_cast<std::size_t>(hit - 1)).reward_terms.collision, 1);
    EXPECT_TRUE(Replay(SceneFor(ref), e).ok);
    return;
  }
  FAIL() << "no obstacle course produced a collision";
}

TEST_F(TeleopTest, StaleAndUnknownTicksRejected) {
  TeleopSession s = Session();
  Begin(s, "straight-6");
  for (int i = 0; i < 60; ++i) s.Tick();
  EXPECT_EQ(s.HandleLine("annotate kind=collision tick=5").at(0),
            "ack op=annotate ok=0 tick=5 reason=stale");
  EXPECT_EQ(s.HandleLine("annotate kind=collision tick=61").at(0),
            "ack op=annotate ok=0 tick=61 reason=unknown-tick");
  EXPECT_EQ(s.HandleLine("annotate kind=bump tick=59").at(0),
            "ack op=annotate ok=0 tick=59 reason=bad-kind");
  EXPECT_EQ(s.HandleLine("annotate kind=collision tick=10").at(0), "ack op=annotate ok=1 tick=10");
}

TEST_F(TeleopTest, DisconnectSavesPartialEpisode) {
  TeleopSession s = Session();
  Begin(s, "straight-7");
  s.HandleLine("control v=1.0 omega=0");
  for (int i = 0; i < 15; ++i) s.Tick();
  const auto lines = s.Disconnect();
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].rfind("episode_end reason=disconnect", 0), 0u);
  EXPECT_FALSE(s.active());
  const EpisodeRecord e = LoadEpisode(s.saved().at(0));
  EXPECT_TRUE(e.footer.partial);
  EXPECT_EQ(e.steps.size(), 15u);
  EXPECT_TRUE(Replay(SceneFor("straight-7"), e).ok);
}

TEST(WebSocket, AcceptKeyExample) {
  EXPECT_EQ(WebSocketAccept("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

// Minimal blocking clients for the server tests.
class Client {
 public:
  explicit Client(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      throw Error("connect failed");
    }
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }
  ~Client() { Close(); }
  void Close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void SendRaw(const std::string& data) { ASSERT_EQ(::send(fd_, data.data(), data.size(), 0), static_cast<ssize_t>(data.size())); }
  // Returns "" on EOF or timeout.
  bool Fill() {
    char buf[4096];
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n <= 0) return false;
    buf_.append(buf, static_cast<std::size_t>(n));
    return true;
  }
  std::string ReadLine() {
    for (;;) {
      const auto pos = buf_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buf_.substr(0, pos);
        buf_.erase(0, pos + 1);
        return line;
      }
      if (!Fill()) return "";
    }
  }
  // Reads until a line starting with `prefix`.
  std::string Await(const std::string& prefix) {
    for (std::string line = ReadLine(); !line.empty(); line = ReadLine()) {
      if (line.rfind(prefix, 0) == 0) return line;
    }
    return "";
  }

  void SendFrame(const std::string& payload) {
    std::string f{static_cast<char>(0x81)};
    f.push_back(static_cast<char>(0x80 | payload.size()));
    const unsigned char mask[4] = {0x12, 0x34, 0x56, 0x78};
    f.append(reinterpret_cast<const char*>(mask), 4);
    for (std::size_t i = 0; i < payload.size(); ++i) f.push_back(static_cast<char>(payload[i] ^ mask[i % 4]));
    SendRaw(f);
  }
  std::string ReadFrame() {
    for (;;) {
      if (buf_.size() >= 2) {
        const auto* p = reinterpret_cast<const unsigned char*>(buf_.data());
        std::size_t len = p[1] & 0x7f, off = 2;
        if (len == 126 && buf_.size() >= 4) {
          len = (std::size_t{p[2]} << 8) | p[3];
          off = 4;
        }
        if (len != 126 && buf_.size() >= off + len) {
          std::string payload = buf_.substr(off, len);
          buf_.erase(0, off + len);
          return payload;
        }
      }
      if (!Fill()) return "";
    }
  }
  std::string& buffer() { return buf_; }

 private:
  int fd_ = -1;
  std::string buf_;
};

class ServerTest : public TeleopTest {
 protected:
  void StartServer() {
    server_ = std::make_unique<TeleopServer>(SceneFor, options_, 50.0);
    port_ = server_->Listen(0);
    thread_ = std::thread([this] { server_->Run(); });
  }
  void TearDown() override {
    if (server_) {
      server_->Stop();
      thread_.join();
    }
    TeleopTest::TearDown();
  }
  std::vector<fs::path> WaitSaved(std::size_t n) {
    for (int i = 0; i < 500 && server_->saved().size() < n; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return server_->saved();
  }

  std::unique_ptr<TeleopServer> server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(ServerTest, RawClientDrivesAndSaves) {
  StartServer();
  Client c(port_);
  c.SendRaw("hello version=1\nepisode_begin scene=straight-8 seed=3\n");
  EXPECT_EQ(c.ReadLine(), "hello version=1");
  EXPECT_EQ(c.Await("ack op=episode_begin").rfind("ack op=episode_begin ok=1", 0), 0u);
  c.SendRaw("control v=1.0 omega=0\n");
  std::string state;
  while (StateTick(state) < 20) state = c.Await("state ");
  c.SendRaw("annotate kind=collision tick=15\n");
  EXPECT_EQ(c.Await("ack op=annotate"), "ack op=annotate ok=1 tick=15");
  c.SendRaw("episode_end reason=done\n");
  EXPECT_NE(c.Await("episode_end ").find("saved=1"), std::string::npos);

  const auto saved = WaitSaved(1);
  ASSERT_EQ(saved.size(), 1u);
  const EpisodeRecord e = LoadEpisode(saved[0]);
  EXPECT_EQ(e.steps.at(14).reward_terms.collision, 1);
  EXPECT_TRUE(Replay(SceneFor("straight-8"), e).ok);
}

TEST_F(ServerTest, WebSocketClientDrivesAndSaves) {
  StartServer();
  Client c(port_);
  c.SendRaw("GET /teleop HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
            "Connection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n");
  while (c.buffer().find("\r\n\r\n") == std::string::npos) ASSERT_TRUE(c.Fill());
  const auto head_end = c.buffer().find("\r\n\r\n");
  const std::string head = c.buffer().substr(0, head_end);
  c.buffer().erase(0, head_end + 4);
  EXPECT_EQ(head.rfind("HTTP/1.1 101", 0), 0u);
  EXPECT_NE(head.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);

  c.SendFrame("hello version=1");
  EXPECT_EQ(c.ReadFrame(), "hello version=1");
  c.SendFrame("episode_begin scene=straight-9 seed=1");
  std::string f = c.ReadFrame();
  EXPECT_EQ(f.rfind("ack op=episode_begin ok=1", 0), 0u) << f;
  c.SendFrame("control v=0.7 omega=0");
  while (StateTick(f) < 10) f = c.ReadFrame();
  c.SendFrame("episode_end reason=done");
  while (!f.empty() && f.rfind("episode_end ", 0) != 0) f = c.ReadFrame();
  EXPECT_NE(f.find("saved=1"), std::string::npos);
  const auto saved = WaitSaved(1);
  ASSERT_EQ(saved.size(), 1u);
  EXPECT_TRUE(Replay(SceneFor("straight-9"), LoadEpisode(saved[0])).ok);
}

TEST_F(ServerTest, WrongUpgradePathIsRefused) {
  StartServer();
  Client c(port_);
  c.SendRaw("GET /other HTTP/1.1\r\nSec-WebSocket-Key: abc\r\n\r\n");
  EXPECT_EQ(c.ReadLine().rfind("HTTP/1.1 404", 0), 0u);
}

TEST_F(ServerTest, SecondClientIsBusy) {
  StartServer();
  Client first(port_);
  first.SendRaw("hello version=1\n");
  EXPECT_EQ(first.ReadLine(), "hello version=1");
  Client second(port_);
  second.SendRaw("hello version=1\n");
  EXPECT_EQ(second.ReadLine(), "busy");
  EXPECT_EQ(second.ReadLine(), "");  // closed
  first.SendRaw("episode_begin scene=straight-1 seed=1\n");
  EXPECT_EQ(first.Await("ack op=episode_begin").rfind("ack op=episode_begin ok=1", 0), 0u);
}

TEST_F(ServerTest, DisconnectSavesPartial) {
  StartServer();
  {
    Client c(port_);
    c.SendRaw("hello version=1\nepisode_begin scene=straight-10 seed=2\ncontrol v=1 omega=0\n");
    std::string state;
    while (StateTick(state) < 8) state = c.Await("state ");
  }
  const auto saved = WaitSaved(1);
  ASSERT_EQ(saved.size(), 1u);
  const EpisodeRecord e = LoadEpisode(saved[0]);
  EXPECT_TRUE(e.footer.partial);
  EXPECT_TRUE(Replay(SceneFor("straight-10"), e).ok);

  // The server is free again for the next client.
  Client next(port_);
  next.SendRaw("hello version=1\n");
  EXPECT_EQ(next.ReadLine(), "hello version=1");
}

}  // namespace
}  // namespace urbannav
