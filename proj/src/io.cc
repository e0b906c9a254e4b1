#include "urbannav/io.h"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

#include "json.hpp"

#include "urbannav/error.h"

namespace urbannav {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are written in native order");

std::vector<std::string_view> Split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> Fields(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

double ParseDouble(std::string_view s, int line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("bad number '" + std::string(s) + "'", line);
  }
  return v;
}

template <typename Int>
Int ParseInt(std::string_view s, int line) {
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("bad integer '" + std::string(s) + "'", line);
  }
  return v;
}

bool Plain(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' ||
         c == ':' || c == '/' || c == '+';
}

std::string EncodeString(std::string_view s) {
  static const char* kHex = "0123456789ABCDEF";
  std::string out;
  for (char c : s) {
    if (Plain(c)) {
      out.push_back(c);
    } else {
      const auto u = static_cast<unsigned char>(c);
      out.push_back('%');
      out.push_back(kHex[u >> 4]);
      out.push_back(kHex[u & 15]);
    }
  }
  return out;
}

std::string DecodeString(std::string_view s, int line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 2 >= s.size()) throw ParseError("truncated escape", line);
    unsigned v = 0;
    const auto [ptr, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
    if (ec != std::errc() || ptr != s.data() + i + 3) throw ParseError("bad escape", line);
    out.push_back(static_cast<char>(v));
    i += 2;
  }
  return out;
}

void Append(std::string& out, double v) { out += FormatDouble(v); }

void AppendList(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    Append(out, values[i]);
  }
}

std::vector<double> ParseList(std::string_view s, int line) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (auto part : Split(s, ',')) out.push_back(ParseDouble(part, line));
  return out;
}

/// key=value tokens of a record line after its leading tag.
class Record {
 public:
  Record(std::string_view line, int number) : number_(number) {
    const auto fields = Fields(line);
    if (fields.empty()) throw ParseError("empty line", number);
    tag_ = fields[0];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto eq = fields[i].find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key=value", number);
      const std::string key(fields[i].substr(0, eq));
      if (values_.count(key)) throw ParseError("duplicate key " + key, number);
      values_[key] = fields[i].substr(eq + 1);
    }
  }
  std::string_view tag() const { return tag_; }
  int line() const { return number_; }
  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  std::string_view Get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ParseError("missing key " + key, number_);
    return it->second;
  }
  double Double(const std::string& key) const { return ParseDouble(Get(key), number_); }
  template <typename Int>
  Int Integer(const std::string& key) const {
    return ParseInt<Int>(Get(key), number_);
  }
  std::vector<double> List(const std::string& key) const { return ParseList(Get(key), number_); }

 private:
  int number_;
  std::string_view tag_;
  std::map<std::string, std::string_view> values_;
};

std::vector<std::string_view> Lines(std::string_view text) {
  auto lines = Split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

void CheckVersion(std::string_view line, const std::string& magic, int supported) {
  const auto f = Fields(line);
  if (f.size() != 2 || f[0] != magic) throw ParseError("expected '" + magic + " <version>'", 1);
  const int version = ParseInt<int>(f[1], 1);
  if (version != supported) {
    throw ParseError("unsupported " + magic + " version " + std::to_string(version), 1);
  }
}

std::string PoseText(const Pose2& p) {
  std::string s;
  Append(s, p.x);
  s.push_back(',');
  Append(s, p.y);
  s.push_back(',');
  Append(s, p.theta);
  return s;
}

Pose2 ParsePose(std::string_view s, int line) {
  const auto v = ParseList(s, line);
  if (v.size() != 3) throw ParseError("pose needs three values", line);
  Pose2 p;
  p.x = v[0];
  p.y = v[1];
  p.theta = v[2];
  return p;
}

EventKind ParseEventKind(std::string_view s, int line) {
  try {
    return EventKindFromString(std::string(s));
  } catch (const Error&) {
    throw ParseError("unknown event kind '" + std::string(s) + "'", line);
  }
}

template <typename F>
auto Guard(int line, F&& f) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), line);
  }
}

}  // namespace

std::string FormatDouble(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void WriteFileAtomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Episodes

std::string SerializeEpisode(const EpisodeRecord& ep) {
  std::string out = "urbannav-episode " + std::to_string(kEpisodeFormatVersion) + "\n";
  const auto& h = ep.header;
  out += "header id=" + EncodeString(h.episode_id) + " scene=" + EncodeString(h.scene_ref) +
         " source=" + ToString(h.source) + " seed=" + std::to_string(h.seed) +
         " created_at=" + EncodeString(h.created_at) + " noise=" + FormatDouble(h.noise_level) +
         "\n";
  for (const auto& st : ep.steps) {
    out += "step tick=" + std::to_string(st.tick) + " pose=" + PoseText(st.pose) +
           " speed=" + FormatDouble(st.speed) + " obs=";
    AppendList(out, std::span<const double>(st.observation.depths.data(), kRayCount));
    out += " rb=";
    for (std::size_t i = 0; i < st.roadbook.waypoints.size(); ++i) {
      if (i) out.push_back(';');
      Append(out, st.roadbook.waypoints[i].x());
      out.push_back(',');
      Append(out, st.roadbook.waypoints[i].y());
    }
    out += std::string(" cue=") + ToString(st.roadbook.turn_cue.direction) + ":" +
           FormatDouble(st.roadbook.turn_cue.distance);
    out += " action=";
    AppendList(out, std::span<const double>(st.action.data(), st.action.size()));
    out += " terms=" + FormatDouble(st.reward_terms.completion) + "," +
           std::to_string(st.reward_terms.collision) + "," +
           std::to_string(st.reward_terms.deviation);
    out += " events=";
    for (std::size_t i = 0; i < st.events.size(); ++i) {
      if (i) out.push_back(',');
      out += std::string(ToString(st.events[i].kind)) + "@" + std::to_string(st.events[i].tick);
    }
    if (st.control) {
      out += " control=" + FormatDouble(st.control->v) + "," + FormatDouble(st.control->omega);
    }
    out.push_back('\n');
  }
  const auto& f = ep.footer;
  const auto& m = f.metrics;
  out += std::string("footer terminal=") + ToString(f.terminal) +
         " partial=" + (f.partial ? "1" : "0") + " final=" + PoseText(f.final_pose) +
         " success=" + (m.success ? "1" : "0") + " agent_len=" + FormatDouble(m.agent_path_length) +
         " shortest=" + FormatDouble(m.shortest_path_length) +
         " collisions=" + std::to_string(m.collision_steps) +
         " social=" + std::to_string(m.social_violation_steps) +
         " completed=" + FormatDouble(m.completed_route) + " total=" + FormatDouble(m.total_route) +
         " result=" + ToString(m.terminal) + "\n";
  out += "end\n";
  return out;
}

EpisodeRecord ParseEpisode(const std::string& text) {
  const auto lines = Lines(text);
  if (lines.empty()) throw ParseError("empty episode file", 1);
  CheckVersion(lines[0], "urbannav-episode", kEpisodeFormatVersion);
  EpisodeRecord ep;
  if (lines.size() < 2) throw ParseError("truncated episode: missing header", 2);
  {
    const Record r(lines[1], 2);
    if (r.tag() != "header") throw ParseError("expected header record", 2);
    ep.header.episode_id = DecodeString(r.Get("id"), 2);
    ep.header.scene_ref = DecodeString(r.Get("scene"), 2);
    ep.header.source = Guard(2, [&] { return EpisodeSourceFromString(std::string(r.Get("source"))); });
    ep.header.seed = r.Integer<std::uint64_t>("seed");
    ep.header.created_at = DecodeString(r.Get("created_at"), 2);
    ep.header.noise_level = r.Double("noise");
  }
  std::optional<EventKind> terminal;
  bool footer_seen = false;
  bool ended = false;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    if (ended) throw ParseError("content after end marker", ln);
    if (lines[i] == "end") {
      if (!footer_seen) throw ParseError("end marker before footer", ln);
      ended = true;
      continue;
    }
    const Record r(lines[i], ln);
    if (r.tag() == "step") {
      if (footer_seen) throw ParseError("step after footer", ln);
      if (terminal) throw ParseError("step after terminal event", ln);
      EpisodeStep st;
      st.tick = r.Integer<std::int64_t>("tick");
      if (!ep.steps.empty() && st.tick <= ep.steps.back().tick) {
        throw ParseError("step ticks must increase", ln);
      }
      st.pose = ParsePose(r.Get("pose"), ln);
      st.speed = r.Double("speed");
      const auto obs = r.List("obs");
      if (obs.size() != kRayCount) throw ParseError("observation needs 128 depths", ln);
      for (int k = 0; k < kRayCount; ++k) st.observation.depths[k] = obs[k];
      const auto rb = r.Get("rb");
      if (!rb.empty()) {
        for (auto wp : Split(rb, ';')) {
          const auto xy = ParseList(wp, ln);
          if (xy.size() != 2) throw ParseError("roadbook waypoint needs two values", ln);
          st.roadbook.waypoints.emplace_back(xy[0], xy[1]);
        }
      }
      const auto cue = r.Get("cue");
      const auto colon = cue.find(':');
      if (colon == std::string_view::npos) throw ParseError("bad turn cue", ln);
      st.roadbook.turn_cue.direction = Guard(
          ln, [&] { return TurnDirectionFromString(std::string(cue.substr(0, colon))); });
      st.roadbook.turn_cue.distance = ParseDouble(cue.substr(colon + 1), ln);
      const auto action = r.List("action");
      if (action.size() % 3 != 0) throw ParseError("action size must be a multiple of 3", ln);
      st.action = Eigen::Map<const Eigen::VectorXd>(action.data(), action.size());
      const auto terms = Split(r.Get("terms"), ',');
      if (terms.size() != 3) throw ParseError("reward terms need three values", ln);
      st.reward_terms.completion = ParseDouble(terms[0], ln);
      st.reward_terms.collision = ParseInt<int>(terms[1], ln);
      st.reward_terms.deviation = ParseInt<int>(terms[2], ln);
      if (st.reward_terms.collision < 0 || st.reward_terms.collision > 1 ||
          st.reward_terms.deviation < 0 || st.reward_terms.deviation > 1 ||
          !std::isfinite(st.reward_terms.completion)) {
        throw ParseError("reward terms out of range", ln);
      }
      const auto events = r.Get("events");
      if (!events.empty()) {
        for (auto ev : Split(events, ',')) {
          const auto at = ev.find('@');
          if (at == std::string_view::npos) throw ParseError("bad event", ln);
          Event e{ParseEventKind(ev.substr(0, at), ln), ParseInt<std::int64_t>(ev.substr(at + 1), ln)};
          if (IsTerminal(e.kind)) {
            if (terminal) throw ParseError("second terminal event", ln);
            terminal = e.kind;
          }
          st.events.push_back(e);
        }
      }
      if (r.Has("control")) {
        const auto c = r.List("control");
        if (c.size() != 2) throw ParseError("control needs two values", ln);
        st.control = Control{c[0], c[1]};
      }
      ep.steps.push_back(std::move(st));
    } else if (r.tag() == "footer") {
      if (footer_seen) throw ParseError("second footer", ln);
      footer_seen = true;
      auto& f = ep.footer;
      f.terminal = ParseEventKind(r.Get("terminal"), ln);
      if (!IsTerminal(f.terminal)) throw ParseError("footer terminal is not terminal", ln);
      if (terminal && *terminal != f.terminal) {
        throw ParseError("footer terminal disagrees with step events", ln);
      }
      f.partial = r.Integer<int>("partial") != 0;
      f.final_pose = ParsePose(r.Get("final"), ln);
      auto& m = f.metrics;
      m.success = r.Integer<int>("success") != 0;
      m.agent_path_length = r.Double("agent_len");
      m.shortest_path_length = r.Double("shortest");
      m.collision_steps = r.Integer<int>("collisions");
      m.social_violation_steps = r.Integer<int>("social");
      m.completed_route = r.Double("completed");
      m.total_route = r.Double("total");
      m.terminal = ParseEventKind(r.Get("result"), ln);
      if (m.completed_route > m.total_route || m.agent_path_length < 0.0 ||
          m.shortest_path_length < 0.0) {
        throw ParseError("footer metrics violate invariants", ln);
      }
    } else {
      throw ParseError("unknown record '" + std::string(r.tag()) + "'", ln);
    }
  }
  const int eof = static_cast<int>(lines.size()) + 1;
  if (!footer_seen) throw ParseError("truncated episode: missing footer", eof);
  if (!ended) throw ParseError("truncated episode: missing end marker", eof);
  return ep;
}

void SaveEpisode(const EpisodeRecord& episode, const fs::path& path) {
  WriteFileAtomic(path, SerializeEpisode(episode));
}

EpisodeRecord LoadEpisode(const fs::path& path) { return ParseEpisode(ReadFile(path)); }

// ---------------------------------------------------------------------------
// Scenes and routes

namespace {

std::string PointsText(const std::vector<Point2>& pts) {
  std::string s = std::to_string(pts.size());
  for (const auto& p : pts) s += " " + FormatDouble(p.x()) + " " + FormatDouble(p.y());
  return s;
}

std::vector<Point2> ParsePoints(const std::vector<std::string_view>& f, std::size_t from, int ln) {
  if (f.size() <= from) throw ParseError("missing point count", ln);
  const auto n = ParseInt<std::size_t>(f[from], ln);
  if (f.size() != from + 1 + 2 * n) throw ParseError("point count does not match values", ln);
  std::vector<Point2> pts;
  for (std::size_t i = 0; i < n; ++i) {
    pts.emplace_back(ParseDouble(f[from + 1 + 2 * i], ln), ParseDouble(f[from + 2 + 2 * i], ln));
  }
  return pts;
}

}  // namespace

std::string SerializeScene(const Scene& s) {
  std::string out = "urbannav-scene " + std::to_string(kSceneFormatVersion) + "\n";
  out += "seed " + std::to_string(s.seed) + "\n";
  out += std::string("kind ") + ToString(s.kind) + "\n";
  out += "goal_radius " + FormatDouble(s.goal_radius) + "\n";
  out += "spawn " + FormatDouble(s.spawn.x) + " " + FormatDouble(s.spawn.y) + " " +
         FormatDouble(s.spawn.theta) + "\n";
  out += "goal " + FormatDouble(s.goal.x()) + " " + FormatDouble(s.goal.y()) + "\n";
  for (const auto& poly : s.walkable) out += "polygon " + PointsText(poly.vertices) + "\n";
  for (const auto& c : s.circles) {
    out += "circle " + FormatDouble(c.center.x()) + " " + FormatDouble(c.center.y()) + " " +
           FormatDouble(c.radius) + "\n";
  }
  for (const auto& b : s.boxes) {
    out += "box " + FormatDouble(b.min.x()) + " " + FormatDouble(b.min.y()) + " " +
           FormatDouble(b.max.x()) + " " + FormatDouble(b.max.y()) + "\n";
  }
  for (const auto& p : s.pedestrians) {
    out += "pedestrian " + FormatDouble(p.spawn.x()) + " " + FormatDouble(p.spawn.y()) + " " +
           FormatDouble(p.goal.x()) + " " + FormatDouble(p.goal.y()) + " " +
           FormatDouble(p.speed) + "\n";
  }
  out += "route " + PointsText(s.gt_route.points()) + "\n";
  if (s.nav_route) out += "nav_route " + PointsText(s.nav_route->points()) + "\n";
  out += "end\n";
  return out;
}

Scene ParseScene(const std::string& text) {
  const auto lines = Lines(text);
  if (lines.empty()) throw ParseError("empty scene file", 1);
  CheckVersion(lines[0], "urbannav-scene", kSceneFormatVersion);
  Scene s;
  bool route = false;
  bool ended = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto f = Fields(lines[i]);
    if (f.empty()) continue;
    if (ended) throw ParseError("content after end marker", ln);
    auto need = [&](std::size_t n) {
      if (f.size() != n) throw ParseError("wrong number of values for " + std::string(f[0]), ln);
    };
    auto d = [&](std::size_t k) { return ParseDouble(f[k], ln); };
    if (f[0] == "seed") {
      need(2);
      s.seed = ParseInt<std::uint64_t>(f[1], ln);
    } else if (f[0] == "kind") {
      need(2);
      s.kind = Guard(ln, [&] { return SceneKindFromString(std::string(f[1])); });
    } else if (f[0] == "goal_radius") {
      need(2);
      s.goal_radius = d(1);
    } else if (f[0] == "spawn") {
      need(4);
      s.spawn = Pose2(d(1), d(2), 0.0);
      s.spawn.theta = d(3);
    } else if (f[0] == "goal") {
      need(3);
      s.goal = Point2(d(1), d(2));
    } else if (f[0] == "polygon") {
      s.walkable.push_back({ParsePoints(f, 1, ln)});
      if (s.walkable.back().vertices.size() < 3) throw ParseError("polygon needs 3 vertices", ln);
    } else if (f[0] == "circle") {
      need(4);
      s.circles.push_back({Point2(d(1), d(2)), d(3)});
    } else if (f[0] == "box") {
      need(5);
      s.boxes.push_back({Point2(d(1), d(2)), Point2(d(3), d(4))});
    } else if (f[0] == "pedestrian") {
      need(6);
      s.pedestrians.push_back({Point2(d(1), d(2)), Point2(d(3), d(4)), d(5)});
    } else if (f[0] == "route") {
      s.gt_route = Guard(ln, [&] { return Polyline(ParsePoints(f, 1, ln)); });
      route = true;
    } else if (f[0] == "nav_route") {
      s.nav_route = Guard(ln, [&] { return Polyline(ParsePoints(f, 1, ln)); });
    } else if (f[0] == "end") {
      ended = true;
    } else {
      throw ParseError("unknown scene record '" + std::string(f[0]) + "'", ln);
    }
  }
  const int eof = static_cast<int>(lines.size()) + 1;
  if (!ended) throw ParseError("truncated scene: missing end marker", eof);
  if (!route) throw ParseError("scene has no route", eof);
  if (s.walkable.empty()) throw ParseError("scene has no walkable area", eof);
  return s;
}

void SaveScene(const Scene& scene, const fs::path& path) {
  WriteFileAtomic(path, SerializeScene(scene));
}

Scene LoadScene(const fs::path& path) { return ParseScene(ReadFile(path)); }

std::string SerializeRoute(const Polyline& route) {
  std::string out = "# urbannav-route " + std::to_string(kRouteFormatVersion) + "\n";
  for (const auto& p : route.points()) out += FormatDouble(p.x()) + " " + FormatDouble(p.y()) + "\n";
  return out;
}

Polyline ParseRoute(const std::string& text) {
  const auto lines = Lines(text);
  if (lines.empty()) throw ParseError("empty route file", 1);
  const auto head = Fields(lines[0]);
  if (head.size() != 3 || head[0] != "#" || head[1] != "urbannav-route") {
    throw ParseError("expected '# urbannav-route <version>'", 1);
  }
  if (ParseInt<int>(head[2], 1) != kRouteFormatVersion) {
    throw ParseError("unsupported route version", 1);
  }
  std::vector<Point2> pts;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto f = Fields(lines[i]);
    if (f.empty() || f[0].starts_with("#")) continue;
    if (f.size() != 2) throw ParseError("route lines hold 'x y'", ln);
    pts.emplace_back(ParseDouble(f[0], ln), ParseDouble(f[1], ln));
  }
  return Guard(static_cast<int>(lines.size()), [&] { return Polyline(std::move(pts)); });
}

TraceFrame TraceFrameFromString(const std::string& s) {
  if (s == "xy") return TraceFrame::kXy;
  if (s == "latlon") return TraceFrame::kLatLon;
  throw ParameterError("unknown trace frame: " + s);
}

Polyline ImportTrace(const std::string& text, TraceFrame frame) {
  constexpr double kEarthRadius = 6371000.0;
  const auto lines = Lines(text);
  std::vector<Point2> pts;
  double lat0 = 0.0;
  double lon0 = 0.0;
  int last = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto f = Fields(lines[i]);
    if (f.empty() || f[0].starts_with("#")) continue;
    if (f.size() != 2 && f.size() != 3) throw ParseError("expected 2 or 3 numbers", ln);
    const double a = ParseDouble(f[0], ln);
    const double b = ParseDouble(f[1], ln);
    if (f.size() == 3) ParseDouble(f[2], ln);
    if (!std::isfinite(a) || !std::isfinite(b)) throw ParseError("non-finite coordinate", ln);
    last = ln;
    if (frame == TraceFrame::kXy) {
      pts.emplace_back(a, b);
      continue;
    }
    if (std::abs(a) > 90.0 || std::abs(b) > 180.0) throw ParseError("latitude/longitude out of range", ln);
    if (pts.empty()) {
      lat0 = a;
      lon0 = b;
    }
    const double k = M_PI / 180.0;
    pts.emplace_back(kEarthRadius * (b - lon0) * k * std::cos(lat0 * k),
                     kEarthRadius * (a - lat0) * k);
  }
  if (pts.size() < 2) throw ParseError("trace needs at least two points", std::max(1, last));
  return Guard(last, [&] { return Polyline(std::move(pts)); });
}

// ---------------------------------------------------------------------------
// Manifests

std::string SerializeManifest(const DatasetManifest& m) {
  std::string out = "urbannav-manifest " + std::to_string(kManifestFormatVersion) + "\n";
  out += "digest " + EncodeString(m.config_digest) + "\n";
  for (const auto& [source, count] : m.source_counts) {
    out += "count " + source + " " + std::to_string(count) + "\n";
  }
  for (const auto& e : m.episodes) out += "episode " + EncodeString(e) + "\n";
  return out;
}

DatasetManifest ParseManifest(const std::string& text) {
  const auto lines = Lines(text);
  if (lines.empty()) throw ParseError("empty manifest", 1);
  CheckVersion(lines[0], "urbannav-manifest", kManifestFormatVersion);
  DatasetManifest m;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto f = Fields(lines[i]);
    if (f.empty()) continue;
    if (f[0] == "digest" && f.size() == 2) {
      m.config_digest = DecodeString(f[1], ln);
    } else if (f[0] == "count" && f.size() == 3) {
      Guard(ln, [&] { return EpisodeSourceFromString(std::string(f[1])); });
      m.source_counts[std::string(f[1])] = ParseInt<int>(f[2], ln);
    } else if (f[0] == "episode" && f.size() == 2) {
      m.episodes.push_back(DecodeString(f[1], ln));
    } else {
      throw ParseError("unknown manifest record", ln);
    }
  }
  return m;
}

std::vector<EpisodeRecord> LoadDataset(const fs::path& path) {
  const DatasetManifest m = ParseManifest(ReadFile(path));
  std::vector<EpisodeRecord> out;
  std::map<std::string, int> counts;
  for (const auto& rel : m.episodes) {
    const fs::path p = path.parent_path() / rel;
    try {
      out.push_back(LoadEpisode(p));
    } catch (const Error& e) {
      throw Error(p.string() + ": " + e.what());
    }
    ++counts[ToString(out.back().header.source)];
  }
  for (const auto& [source, count] : m.source_counts) {
    if (count != (counts.count(source) ? counts[source] : 0)) {
      throw ParseError("manifest count for " + source + " does not match its episodes");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string SerializeCheckpoint(const Checkpoint& c) {
  std::string out = "urbannav-checkpoint " + std::to_string(kCheckpointFormatVersion) + "\n";
  out += "seed " + std::to_string(c.seed) + "\n";
  out += "epoch " + std::to_string(c.epoch) + "\n";
  std::vector<std::pair<std::string, const Mlp<float>*>> nets{{"policy", &c.policy}};
  if (c.q) nets.emplace_back("q", &*c.q);
  if (c.v) nets.emplace_back("v", &*c.v);
  if (c.q_target) nets.emplace_back("q_target", &*c.q_target);
  for (const auto& [name, net] : nets) {
    out += "net " + name;
    for (int d : net->dims()) out += " " + std::to_string(d);
    out += "\n";
  }
  for (const auto& [k, v] : c.config) out += "config " + EncodeString(k) + " " + EncodeString(v) + "\n";
  for (const auto& [k, v] : c.metrics) out += "metric " + EncodeString(k) + " " + EncodeString(v) + "\n";
  out += "end-header\n";
  for (const auto& [name, net] : nets) {
    const auto& p = net->params();
    out.append(reinterpret_cast<const char*>(p.data()), sizeof(float) * p.size());
  }
  return out;
}

Checkpoint ParseCheckpoint(const std::string& bytes) {
  const std::string marker = "end-header\n";
  const std::size_t end = bytes.find(marker);
  if (end == std::string::npos) throw ParseError("checkpoint header is not terminated");
  const auto lines = Lines(std::string_view(bytes).substr(0, end));
  if (lines.empty()) throw ParseError("empty checkpoint", 1);
  CheckVersion(lines[0], "urbannav-checkpoint", kCheckpointFormatVersion);
  Checkpoint c;
  std::vector<std::pair<std::string, std::vector<int>>> nets;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto f = Fields(lines[i]);
    if (f.empty()) continue;
    if (f[0] == "seed" && f.size() == 2) {
      c.seed = ParseInt<std::uint64_t>(f[1], ln);
    } else if (f[0] == "epoch" && f.size() == 2) {
      c.epoch = ParseInt<int>(f[1], ln);
    } else if (f[0] == "net" && f.size() >= 4) {
      std::vector<int> dims;
      for (std::size_t k = 2; k < f.size(); ++k) dims.push_back(ParseInt<int>(f[k], ln));
      nets.emplace_back(std::string(f[1]), dims);
    } else if ((f[0] == "config" || f[0] == "metric") && (f.size() == 3 || f.size() == 2)) {
      auto& dst = f[0] == "config" ? c.config : c.metrics;
      dst[DecodeString(f[1], ln)] = f.size() == 3 ? DecodeString(f[2], ln) : "";
    } else {
      throw ParseError("unknown checkpoint header record", ln);
    }
  }
  std::size_t offset = end + marker.size();
  bool has_policy = false;
  for (const auto& [name, dims] : nets) {
    Mlp<float> net = Guard(0, [&] { return Mlp<float>(dims); });
    const std::size_t n = sizeof(float) * static_cast<std::size_t>(net.num_params());
    if (offset + n > bytes.size()) throw ParseError("checkpoint parameter block truncated");
    std::memcpy(net.params().data(), bytes.data() + offset, n);
    offset += n;
    if (name == "policy") {
      c.policy = std::move(net);
      has_policy = true;
    } else if (name == "q") {
      c.q = std::move(net);
    } else if (name == "v") {
      c.v = std::move(net);
    } else if (name == "q_target") {
      c.q_target = std::move(net);
    } else {
      throw ParseError("unknown network '" + name + "'");
    }
  }
  if (!has_policy) throw ParseError("checkpoint has no policy network");
  if (offset != bytes.size()) throw ParseError("trailing bytes after parameter blocks");
  return c;
}

void SaveCheckpoint(const Checkpoint& c, const fs::path& path) {
  WriteFileAtomic(path, SerializeCheckpoint(c));
}

Checkpoint LoadCheckpoint(const fs::path& path) { return ParseCheckpoint(ReadFile(path)); }

// ---------------------------------------------------------------------------
// Config

std::map<std::string, std::string> ParseConfig(const std::string& text) {
  std::map<std::string, std::string> kv;
  bool versioned = false;
  const auto lines = Lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    std::string_view line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto f = Fields(line);
    if (f.empty()) continue;
    if (!versioned) {
      if (f.size() != 2 || f[0] != "urbannav-config") {
        throw ParseError("expected 'urbannav-config <version>'", ln);
      }
      if (ParseInt<int>(f[1], ln) != kConfigFormatVersion) throw ParseError("unsupported config version", ln);
      versioned = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", ln);
    const auto key = Fields(line.substr(0, eq));
    const auto value = Fields(line.substr(eq + 1));
    if (key.size() != 1 || value.size() > 1) throw ParseError("expected key=value", ln);
    kv[std::string(key[0])] = value.empty() ? "" : std::string(value[0]);
  }
  if (!versioned) throw ParseError("config has no version line", 1);
  return kv;
}

void ApplyConfig(const std::map<std::string, std::string>& kv, TrainConfig& t) {
  for (const auto& [key, value] : kv) {
    auto num = [&] {
      const double v = ParseDouble(value, 0);
      if (!std::isfinite(v)) throw ParameterError("config value for " + key + " must be finite");
      return v;
    };
    auto integer = [&] { return ParseInt<int>(value, 0); };
    try {
      if (key == "epochs") t.epochs = integer();
      else if (key == "batch_size") t.batch_size = integer();
      else if (key == "lr") t.lr = num();
      else if (key == "seed") t.seed = ParseInt<std::uint64_t>(value, 0);
      else if (key == "route") t.route = RouteSourceFromString(value);
      else if (key == "htl.sg_window") t.htl.sg_window = integer();
      else if (key == "htl.sg_order") t.htl.sg_order = integer();
      else if (key == "htl.corner_window") t.htl.corner_window = integer();
      else if (key == "htl.corner_angle_threshold") t.htl.corner_angle_threshold = num();
      else if (key == "htl.corner_min_spacing") t.htl.corner_min_spacing = num();
      else if (key == "htl.noise_sigma") t.htl.noise_sigma = num();
      else if (key == "htl.noise_control_spacing") t.htl.noise_control_spacing = num();
      else if (key == "htl.resample_step") t.htl.resample_step = num();
      else if (key == "htl.corner_sample_step") t.htl.corner_sample_step = num();
      else if (key == "iql.gamma") t.iql.gamma = num();
      else if (key == "iql.expectile") t.iql.expectile = num();
      else if (key == "iql.beta") t.iql.beta = num();
      else if (key == "iql.adv_clip") t.iql.adv_clip = num();
      else if (key == "iql.target_copy_every") t.iql.target_copy_every = integer();
      else if (key == "value_hidden") {
        t.value_hidden.clear();
        for (auto part : Split(value, ',')) t.value_hidden.push_back(ParseInt<int>(part, 0));
      } else {
        throw ParameterError("unknown config key: " + key);
      }
    } catch (const ParseError&) {
      throw ParameterError("bad value for config key " + key + ": " + value);
    }
  }
  if (t.epochs < 0 || t.batch_size <= 0 || !(t.lr > 0.0)) {
    throw ParameterError("epochs, batch_size and lr must be positive");
  }
  t.htl.Validate();
}

std::map<std::string, std::string> DescribeConfig(const TrainConfig& t) {
  std::map<std::string, std::string> kv;
  kv["epochs"] = std::to_string(t.epochs);
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["lr"] = FormatDouble(t.lr);
  kv["seed"] = std::to_string(t.seed);
  kv["route"] = ToString(t.route);
  kv["htl.sg_window"] = std::to_string(t.htl.sg_window);
  kv["htl.sg_order"] = std::to_string(t.htl.sg_order);
  kv["htl.corner_window"] = std::to_string(t.htl.corner_window);
  kv["htl.corner_angle_threshold"] = FormatDouble(t.htl.corner_angle_threshold);
  kv["htl.corner_min_spacing"] = FormatDouble(t.htl.corner_min_spacing);
  kv["htl.noise_sigma"] = FormatDouble(t.htl.noise_sigma);
  kv["htl.noise_control_spacing"] = FormatDouble(t.htl.noise_control_spacing);
  kv["htl.resample_step"] = FormatDouble(t.htl.resample_step);
  kv["htl.corner_sample_step"] = FormatDouble(t.htl.corner_sample_step);
  kv["iql.gamma"] = FormatDouble(t.iql.gamma);
  kv["iql.expectile"] = FormatDouble(t.iql.expectile);
  kv["iql.beta"] = FormatDouble(t.iql.beta);
  kv["iql.adv_clip"] = FormatDouble(t.iql.adv_clip);
  kv["iql.target_copy_every"] = std::to_string(t.iql.target_copy_every);
  std::string hidden;
  for (std::size_t i = 0; i < t.value_hidden.size(); ++i) {
    if (i) hidden += ",";
    hidden += std::to_string(t.value_hidden[i]);
  }
  kv["value_hidden"] = hidden;
  return kv;
}

std::string ConfigDigest(const std::map<std::string, std::string>& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : kv) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Reports

std::string SerializeReportTable(const MetricReport& report) {
  return "# urbannav-report " + std::to_string(kReportFormatVersion) +
         " digest=" + EncodeString(report.config_digest) + "\n" + FormatReportTable(report);
}

std::string SerializeReportJson(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["format"] = "urbannav-report";
  j["version"] = kReportFormatVersion;
  j["config_digest"] = report.config_digest;
  j["aggregate"] = {{"sr", report.sr},   {"spl", report.spl}, {"sns", report.sns},
                    {"cc", report.cc},   {"rc", report.rc},   {"episodes", report.rows.size()}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    const auto& r = row.result;
    rows.push_back({{"scene", row.scene_id},
                    {"kind", ToString(row.kind)},
                    {"seed", row.seed},
                    {"success", r.success},
                    {"terminal", ToString(r.terminal)},
                    {"agent_path_length", r.agent_path_length},
                    {"shortest_path_length", r.shortest_path_length},
                    {"collision_steps", r.collision_steps},
                    {"social_violation_steps", r.social_violation_steps},
                    {"completed_route", r.completed_route},
                    {"total_route", r.total_route},
                    {"spl", Spl(r)},
                    {"sns", SocialNavigationScore(r)},
                    {"rc", RouteCompletion(r)}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace urbannav
