#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "urbannav/episode.h"
#include "urbannav/route.h"
#include "urbannav/scene.h"
#include "urbannav/sim.h"

namespace urbannav {

inline constexpr int kWireVersion = 1;
inline constexpr int kStaleAnnotationTicks = 50;

/// Resolves an episode_begin scene reference; throws Error when unknown.
using SceneSource = std::function<Scene(const std::string& scene_ref)>;

struct TeleopOptions {
  SimConfig sim;
  std::filesystem::path out_dir = ".";
  /// Written into episode headers; empty keeps outputs reproducible.
  std::string created_at;
};

/// Transport-free teleoperation state machine. Client lines go in through
/// HandleLine, the owner calls Tick at the control rate; both return the
/// server lines to send, in order.
///
/// Wire records (one per line, key=value fields):
///   hello version=1
///   episode_begin scene=<ref> seed=<n>
///   control v=<m/s> omega=<rad/s>
///   annotate kind=collision|deviation|clear tick=<t>
///   episode_end reason=<text>
///   state tick= pose=x,y,th speed= peds=x,y;... rays=<hex> rb=x,y;... cue=dir:dist
///         terms=c,coll,dev events=kind@tick,...
///   ack op=<record> ok=0|1 [reason=] [tick=] [episode=] [path=]
///   busy
///
/// State ticks are post-step sim ticks; `annotate tick=T` marks the step
/// that produced tick T.
class TeleopSession {
 public:
  TeleopSession(SceneSource scenes, TeleopOptions options);

  std::vector<std::string> HandleLine(const std::string& line);
  /// Advances the active episode by one tick with the held control.
  std::vector<std::string> Tick();
  /// A new connection must greet again.
  void NewClient() { greeted_ = false; }
  /// Client went away: saves the active episode flagged partial.
  std::vector<std::string> Disconnect();

  bool greeted() const { return greeted_; }
  bool active() const { return episode_.has_value(); }
  std::int64_t tick() const;
  /// Paths of every episode written so far.
  const std::vector<std::filesystem::path>& saved() const { return saved_; }

 private:
  struct Mark {
    bool collision = false;
    bool deviation = false;
  };
  struct Active {
    std::string scene_ref;
    Scene scene;
    SimState state;
    std::unique_ptr<RoadbookEncoder> encoder;
    double rb_progress = 0.0;
    Control held;
    EpisodeRecord record;
    std::vector<Mark> auto_marks;
    std::map<std::size_t, Mark> manual;
  };

  std::vector<std::string> Begin(const std::string& scene_ref, std::uint64_t seed);
  std::vector<std::string> End(const std::string& reason, bool partial);
  std::string Annotate(const std::string& kind, std::int64_t tick);
  std::string StateLine(const EpisodeStep& step) const;

  SceneSource scenes_;
  TeleopOptions options_;
  bool greeted_ = false;
  std::optional<Active> episode_;
  int episode_count_ = 0;
  std::vector<std::filesystem::path> saved_;
};

/// WebSocket accept key for a client's Sec-WebSocket-Key.
std::string WebSocketAccept(const std::string& client_key);

/// TCP server for one session at a time. A connection is either a raw line
/// stream or an HTTP upgrade on GET /teleop carrying one record per text
/// frame. Further clients get "busy" and are closed.
class TeleopServer {
 public:
  TeleopServer(SceneSource scenes, TeleopOptions options, double tick_hz = 10.0);
  ~TeleopServer();

  /// Binds 127.0.0.1:port (0 picks a free port); returns the bound port.
  int Listen(int port);
  /// Serves until Stop(); call from a dedicated thread.
  void Run();
  void Stop();
  std::vector<std::filesystem::path> saved() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace urbannav
