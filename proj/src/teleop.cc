#include "urbannav/teleop.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>

#include "urbannav/error.h"
#include "urbannav/io.h"
#include "urbannav/rollout.h"

namespace urbannav {

namespace {

struct WireRecord {
  std::string tag;
  std::map<std::string, std::string> fields;
};

std::optional<WireRecord> ParseWire(const std::string& line) {
  std::istringstream in(line);
  WireRecord r;
  if (!(in >> r.tag)) return std::nullopt;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) return std::nullopt;
    r.fields[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return r;
}

std::optional<double> FieldDouble(const WireRecord& r, const std::string& key) {
  auto it = r.fields.find(key);
  if (it == r.fields.end()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0' || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::int64_t> FieldInt(const WireRecord& r, const std::string& key) {
  auto it = r.fields.find(key);
  if (it == r.fields.end() || it->second.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(it->second.c_str(), &end, 10);
  if (*end != '\0' || errno != 0) return std::nullopt;
  return v;
}

std::string Ack(const std::string& op, bool ok, const std::string& extra = "") {
  return "ack op=" + op + " ok=" + (ok ? "1" : "0") + (extra.empty() ? "" : " " + extra);
}

std::string Digest(const Observation& obs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(obs.depths.data());
  for (std::size_t i = 0; i < sizeof(double) * kRayCount; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

TeleopSession::TeleopSession(SceneSource scenes, TeleopOptions options)
    : scenes_(std::move(scenes)), options_(std::move(options)) {}

std::int64_t TeleopSession::tick() const { return episode_ ? episode_->state.tick : 0; }

std::vector<std::string> TeleopSession::HandleLine(const std::string& line) {
  const auto rec = ParseWire(line);
  if (!rec) return {Ack("unknown", false, "reason=malformed")};
  const std::string& tag = rec->tag;
  if (tag == "hello") {
    const auto version = FieldInt(*rec, "version");
    if (!version || *version != kWireVersion) {
      return {Ack("hello", false, "reason=unsupported-version")};
    }
    greeted_ = true;
    return {"hello version=" + std::to_string(kWireVersion)};
  }
  if (!greeted_) return {Ack(tag, false, "reason=hello-required")};
  if (tag == "episode_begin") {
    if (episode_) return {Ack(tag, false, "reason=episode-active")};
    auto scene = rec->fields.find("scene");
    const auto seed = FieldInt(*rec, "seed");
    if (scene == rec->fields.end() || !seed || *seed < 0) {
      return {Ack(tag, false, "reason=malformed")};
    }
    return Begin(scene->second, static_cast<std::uint64_t>(*seed));
  }
  if (tag == "control") {
    if (!episode_) return {Ack(tag, false, "reason=no-episode")};
    const auto v = FieldDouble(*rec, "v");
    const auto omega = FieldDouble(*rec, "omega");
    if (!v || !omega) return {Ack(tag, false, "reason=malformed")};
    episode_->held = {*v, *omega};
    return {};
  }
  if (tag == "annotate") {
    auto kind = rec->fields.find("kind");
    const auto t = FieldInt(*rec, "tick");
    if (kind == rec->fields.end() || !t) return {Ack(tag, false, "reason=malformed")};
    return {Annotate(kind->second, *t)};
  }
  if (tag == "episode_end") {
    if (!episode_) return {Ack(tag, false, "reason=no-episode")};
    auto reason = rec->fields.find("reason");
    return End(reason == rec->fields.end() ? "client" : reason->second, false);
  }
  return {Ack(tag, false, "reason=unknown-record")};
}

std::vector<std::string> TeleopSession::Begin(const std::string& scene_ref, std::uint64_t seed) {
  Active a;
  try {
    a.scene = scenes_(scene_ref);
  } catch (const std::exception&) {
    return {Ack("episode_begin", false, "reason=unknown-scene")};
  }
  a.scene_ref = scene_ref;
  a.state = InitialState(a.scene, options_.sim);
  const Polyline& route = a.scene.NavigationRoute();
  a.encoder = std::make_unique<RoadbookEncoder>(route);
  a.rb_progress = AdvanceProgress(route, 0.0, a.scene.spawn.position());
  EpisodeHeader& h = a.record.header;
  h.episode_id = "teleop-" + std::to_string(seed) + "-" + std::to_string(episode_count_++);
  h.scene_ref = scene_ref;
  h.source = EpisodeSource::kTeleop;
  h.seed = seed;
  h.created_at = options_.created_at;
  episode_ = std::move(a);

  EpisodeStep initial;
  initial.tick = episode_->state.tick;
  initial.pose = episode_->state.agent;
  initial.observation = Observe(episode_->state, episode_->scene, options_.sim);
  initial.roadbook = episode_->encoder->Encode(initial.pose, episode_->rb_progress);
  return {Ack("episode_begin", true, "episode=" + episode_->record.header.episode_id),
          StateLine(initial)};
}

std::vector<std::string> TeleopSession::Tick() {
  if (!episode_) return {};
  Active& a = *episode_;
  EpisodeStep st;
  st.tick = a.state.tick;
  st.pose = a.state.agent;
  st.speed = a.state.agent_speed;
  st.observation = Observe(a.state, a.scene, options_.sim);
  st.roadbook = a.encoder->Encode(a.state.agent, a.rb_progress);
  st.control = a.held;
  const double before = a.state.route_progress;
  st.events = Step(a.state, a.scene, a.held, options_.sim);
  a.rb_progress = AdvanceProgress(a.encoder->route(), a.rb_progress, a.state.agent.position());
  st.reward_terms =
      TermsFromEvents(st.events, a.state.route_progress - before, a.scene.gt_route.length());
  a.auto_marks.push_back({st.reward_terms.collision != 0, st.reward_terms.deviation != 0});

  // The state line shows the post-step pose together with this step's terms.
  EpisodeStep shown = st;
  shown.tick = a.state.tick;
  shown.pose = a.state.agent;
  shown.speed = a.state.agent_speed;
  shown.observation = Observe(a.state, a.scene, options_.sim);
  shown.roadbook = a.encoder->Encode(a.state.agent, a.rb_progress);
  a.record.steps.push_back(std::move(st));

  std::vector<std::string> out{StateLine(shown)};
  if (a.state.terminal) {
    auto end = End(ToString(*a.state.terminal), false);
    out.insert(out.end(), end.begin(), end.end());
  }
  return out;
}

std::vector<std::string> TeleopSession::Disconnect() {
  if (!episode_) return {};
  return End("disconnect", true);
}

std::string TeleopSession::Annotate(const std::string& kind, std::int64_t tick) {
  const std::string t = "tick=" + std::to_string(tick);
  if (!episode_) return Ack("annotate", false, t + " reason=no-episode");
  if (kind != "collision" && kind != "deviation" && kind != "clear") {
    return Ack("annotate", false, t + " reason=bad-kind");
  }
  Active& a = *episode_;
  const std::int64_t now = a.state.tick;
  if (tick < now - kStaleAnnotationTicks) return Ack("annotate", false, t + " reason=stale");
  // Tick T was produced by the step recorded at T - 1.
  const auto& steps = a.record.steps;
  if (steps.empty() || tick <= steps.front().tick || tick > now) {
    return Ack("annotate", false, t + " reason=unknown-tick");
  }
  const auto index = static_cast<std::size_t>(tick - 1 - steps.front().tick);
  if (kind == "clear") {
    a.manual.erase(index);
  } else if (kind == "collision") {
    a.manual[index].collision = true;
  } else {
    a.manual[index].deviation = true;
  }
  return Ack("annotate", true, t);
}

std::vector<std::string> TeleopSession::End(const std::string& reason, bool partial) {
  Active a = std::move(*episode_);
  episode_.reset();
  for (std::size_t i = 0; i < a.record.steps.size(); ++i) {
    Mark m = a.auto_marks[i];
    if (auto it = a.manual.find(i); it != a.manual.end()) {
      m.collision = m.collision || it->second.collision;
      m.deviation = m.deviation || it->second.deviation;
    }
    a.record.steps[i].reward_terms.collision = m.collision ? 1 : 0;
    a.record.steps[i].reward_terms.deviation = m.deviation ? 1 : 0;
  }
  auto& f = a.record.footer;
  f.terminal = a.state.terminal.value_or(EventKind::kAborted);
  f.partial = partial;
  f.final_pose = a.state.agent;
  f.metrics = ResultFromState(a.state, a.scene);
  const std::filesystem::path path = options_.out_dir / (a.record.header.episode_id + ".episode");
  try {
    SaveEpisode(a.record, path);
  } catch (const std::exception&) {
    return {"episode_end reason=" + reason + " episode=" + a.record.header.episode_id +
            " saved=0"};
  }
  saved_.push_back(path);
  return {"episode_end reason=" + reason + " episode=" + a.record.header.episode_id +
          " saved=1 path=" + path.filename().string()};
}

std::string TeleopSession::StateLine(const EpisodeStep& s) const {
  std::string out = "state tick=" + std::to_string(s.tick) + " pose=" + FormatDouble(s.pose.x) +
                    "," + FormatDouble(s.pose.y) + "," + FormatDouble(s.pose.theta) +
                    " speed=" + FormatDouble(s.speed) + " peds=";
  const auto& peds = episode_->state.pedestrians;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    if (i) out += ";";
    out += FormatDouble(peds[i].position.x()) + "," + FormatDouble(peds[i].position.y());
  }
  out += " rays=" + Digest(s.observation) + " rb=";
  for (std::size_t i = 0; i < s.roadbook.waypoints.size(); ++i) {
    if (i) out += ";";
    out += FormatDouble(s.roadbook.waypoints[i].x()) + "," +
           FormatDouble(s.roadbook.waypoints[i].y());
  }
  out += std::string(" cue=") + ToString(s.roadbook.turn_cue.direction) + ":" +
         FormatDouble(s.roadbook.turn_cue.distance);
  out += " terms=" + FormatDouble(s.reward_terms.completion) + "," +
         std::to_string(s.reward_terms.collision) + "," + std::to_string(s.reward_terms.deviation);
  out += " events=";
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    if (i) out += ",";
    out += std::string(ToString(s.events[i].kind)) + "@" + std::to_string(s.events[i].tick);
  }
  return out;
}

std::string WebSocketAccept(const std::string& client_key) {
  const std::string magic = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(magic.data()), magic.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), n);
}

// ---------------------------------------------------------------------------
// Server

namespace {

enum class Mode { kUnknown, kRaw, kWebSocket };

struct Connection {
  explicit Connection(int f) : fd(f) {}
  int fd = -1;
  Mode mode = Mode::kUnknown;
  std::string in;
  std::string fragment;
  bool closing = false;
};

bool SendAll(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::string Frame(int opcode, const std::string& payload) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | opcode));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n < 65536) {
    f.push_back(static_cast<char>(126));
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xff));
  } else {
    f.push_back(static_cast<char>(127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  }
  return f + payload;
}

bool SendLine(Connection& c, const std::string& line) {
  if (c.mode == Mode::kWebSocket) return SendAll(c.fd, Frame(1, line));
  return SendAll(c.fd, line + "\n");
}

std::string Header(const std::string& request, const std::string& name) {
  std::istringstream in(request);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (key != name) continue;
    std::string value = line.substr(colon + 1);
    const auto b = value.find_first_not_of(' ');
    const auto e = value.find_last_not_of(' ');
    return b == std::string::npos ? "" : value.substr(b, e - b + 1);
  }
  return "";
}

/// Consumes buffered input; returns complete records. Sets `closing` on
/// protocol errors or a close frame.
std::vector<std::string> Drain(Connection& c) {
  std::vector<std::string> lines;
  if (c.mode == Mode::kUnknown) {
    if (c.in.size() < 4 && c.in.find('\n') == std::string::npos) return lines;
    if (c.in.rfind("GET ", 0) != 0) {
      c.mode = Mode::kRaw;
    } else {
      const auto end = c.in.find("\r\n\r\n");
      if (end == std::string::npos) return lines;
      const std::string request = c.in.substr(0, end + 4);
      c.in.erase(0, end + 4);
      const std::string key = Header(request, "sec-websocket-key");
      const bool path_ok = request.rfind("GET /teleop ", 0) == 0 || request.rfind("GET /teleop?", 0) == 0;
      if (!path_ok || key.empty()) {
        SendAll(c.fd, "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        c.closing = true;
        return lines;
      }
      SendAll(c.fd,
              "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
              "Sec-WebSocket-Accept: " + WebSocketAccept(key) + "\r\n\r\n");
      c.mode = Mode::kWebSocket;
    }
  }
  if (c.mode == Mode::kRaw) {
    std::size_t pos;
    while ((pos = c.in.find('\n')) != std::string::npos) {
      std::string line = c.in.substr(0, pos);
      c.in.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(std::move(line));
    }
    return lines;
  }
  while (c.in.size() >= 2) {
    const auto* p = reinterpret_cast<const unsigned char*>(c.in.data());
    const bool fin = p[0] & 0x80;
    const int opcode = p[0] & 0x0f;
    const bool masked = p[1] & 0x80;
    std::uint64_t len = p[1] & 0x7f;
    std::size_t off = 2;
    if (len == 126) {
      if (c.in.size() < 4) break;
      len = (std::uint64_t{p[2]} << 8) | p[3];
      off = 4;
    } else if (len == 127) {
      if (c.in.size() < 10) break;
      len = 0;
      for (int i = 0; i < 8; ++i) len = (len << 8) | p[2 + i];
      off = 10;
    }
    if (!masked || len > (1u << 20)) {
      c.closing = true;
      break;
    }
    if (c.in.size() < off + 4 + len) break;
    const unsigned char* mask = p + off;
    std::string payload(len, '\0');
    for (std::uint64_t i = 0; i < len; ++i) payload[i] = static_cast<char>(p[off + 4 + i] ^ mask[i % 4]);
    c.in.erase(0, off + 4 + len);
    if (opcode == 8) {
      SendAll(c.fd, Frame(8, ""));
      c.closing = true;
      break;
    }
    if (opcode == 9) {
      SendAll(c.fd, Frame(10, payload));
      continue;
    }
    if (opcode != 0 && opcode != 1) continue;
    c.fragment += payload;
    if (!fin) continue;
    std::istringstream in(c.fragment);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(line);
    }
    c.fragment.clear();
  }
  return lines;
}

/// Reads whatever is available without blocking. False on EOF or error.
bool ReadAvailable(Connection& c) {
  char buf[4096];
  const ssize_t n = ::recv(c.fd, buf, sizeof buf, MSG_DONTWAIT);
  if (n > 0) {
    c.in.append(buf, static_cast<std::size_t>(n));
    return true;
  }
  if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) return true;
  return false;
}

}  // namespace

struct TeleopServer::Impl {
  TeleopSession session;
  std::chrono::nanoseconds period;
  int listen_fd = -1;
  int wake[2] = {-1, -1};
  std::atomic<bool> stop{false};
  std::optional<Connection> client;
  std::vector<Connection> refused;
  mutable std::mutex saved_mutex;
  std::vector<std::filesystem::path> saved;

  Impl(SceneSource scenes, TeleopOptions options, double hz)
      : session(std::move(scenes), std::move(options)),
        period(std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / hz))) {}

  void Publish() {
    std::lock_guard<std::mutex> lock(saved_mutex);
    saved = session.saved();
  }

  void Send(const std::vector<std::string>& lines) {
    if (!client) return;
    for (const auto& l : lines) {
      if (!SendLine(*client, l)) {
        client->closing = true;
        break;
      }
    }
  }

  void DropClient() {
    session.Disconnect();
    Publish();
    ::close(client->fd);
    client.reset();
  }
};

TeleopServer::TeleopServer(SceneSource scenes, TeleopOptions options, double tick_hz) {
  if (!(tick_hz > 0.0)) throw ParameterError("tick rate must be positive");
  impl_ = std::make_unique<Impl>(std::move(scenes), std::move(options), tick_hz);
  if (::pipe(impl_->wake) != 0) throw Error("pipe failed");
}

TeleopServer::~TeleopServer() {
  if (impl_->client) ::close(impl_->client->fd);
  for (auto& c : impl_->refused) ::close(c.fd);
  if (impl_->listen_fd >= 0) ::close(impl_->listen_fd);
  ::close(impl_->wake[0]);
  ::close(impl_->wake[1]);
}

int TeleopServer::Listen(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error("socket failed");
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 8) != 0) {
    ::close(fd);
    throw Error("cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  impl_->listen_fd = fd;
  return ntohs(addr.sin_port);
}

void TeleopServer::Stop() {
  impl_->stop = true;
  const char b = 1;
  [[maybe_unused]] const auto n = ::write(impl_->wake[1], &b, 1);
}

std::vector<std::filesystem::path> TeleopServer::saved() const {
  std::lock_guard<std::mutex> lock(impl_->saved_mutex);
  return impl_->saved;
}

void TeleopServer::Run() {
  Impl& s = *impl_;
  if (s.listen_fd < 0) throw Error("Listen must be called before Run");
  using Clock = std::chrono::steady_clock;
  auto next_tick = Clock::now() + s.period;
  while (!s.stop) {
    std::vector<pollfd> fds{{s.listen_fd, POLLIN, 0}, {s.wake[0], POLLIN, 0}};
    if (s.client) fds.push_back({s.client->fd, POLLIN, 0});
    for (auto& r : s.refused) fds.push_back({r.fd, POLLIN, 0});
    const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(next_tick - Clock::now());
    ::poll(fds.data(), fds.size(), static_cast<int>(std::max<std::int64_t>(0, wait.count())));
    if (s.stop) break;

    if (fds[0].revents & POLLIN) {
      const int fd = ::accept(s.listen_fd, nullptr, nullptr);
      if (fd >= 0) {
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        if (s.client) {
          s.refused.emplace_back(fd);
        } else {
          s.client.emplace(fd);
          s.session.NewClient();
        }
      }
    }

    if (s.client && fds.size() > 2 && (fds[2].revents & (POLLIN | POLLHUP | POLLERR))) {
      if (!ReadAvailable(*s.client)) s.client->closing = true;
      for (const auto& line : Drain(*s.client)) {
        s.Send(s.session.HandleLine(line));
        s.Publish();
      }
    }
    if (s.client && s.client->closing) s.DropClient();

    // Refused clients learn they are busy in whichever framing they speak.
    for (auto it = s.refused.begin(); it != s.refused.end();) {
      ReadAvailable(*it);
      Drain(*it);
      if (it->mode != Mode::kUnknown || it->closing) {
        if (!it->closing) SendLine(*it, "busy");
        ::close(it->fd);
        it = s.refused.erase(it);
      } else {
        ++it;
      }
    }

    if (Clock::now() >= next_tick) {
      next_tick += s.period;
      if (Clock::now() > next_tick) next_tick = Clock::now() + s.period;
      if (s.client) {
        s.Send(s.session.Tick());
        s.Publish();
        if (s.client->closing) s.DropClient();
      }
    }
  }
  if (s.client) s.DropClient();
}

}  // namespace urbannav
