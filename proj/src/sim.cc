#include "urbannav/sim.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "urbannav/error.h"

namespace urbannav {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProgressLookBack = 1.0;
constexpr double kProgressLookAhead = 5.0;
constexpr double kPedestrianArrival = 0.3;
constexpr double kPedestrianSpacing = 0.05;
constexpr double kPedestrianGiveUp = 2.0;
// Pure pursuit turns on the spot when the target is this far off-axis.
constexpr double kTurnInPlace = 1.0;
}  // namespace

const char* ToString(EventKind kind) {
  switch (kind) {
    case EventKind::kCollision:
      return "collision";
    case EventKind::kDeviation:
      return "deviation";
    case EventKind::kNearMiss:
      return "near_miss";
    case EventKind::kSuccess:
      return "success";
    case EventKind::kTimeout:
      return "timeout";
    case EventKind::kCrashOffWalkable:
      return "crash_offwalkable";
    case EventKind::kAborted:
      return "aborted";
  }
  return "collision";
}

EventKind EventKindFromString(const std::string& s) {
  static const EventKind kAll[] = {EventKind::kCollision, EventKind::kDeviation,
                                   EventKind::kNearMiss,  EventKind::kSuccess,
                                   EventKind::kTimeout,   EventKind::kCrashOffWalkable,
                                   EventKind::kAborted};
  for (EventKind k : kAll) {
    if (s == ToString(k)) return k;
  }
  throw ParameterError("unknown event kind '" + s + "'");
}

bool IsTerminal(EventKind kind) {
  return kind == EventKind::kSuccess || kind == EventKind::kTimeout ||
         kind == EventKind::kCrashOffWalkable || kind == EventKind::kAborted;
}

double RayBearing(int head, int index) {
  const double fov = M_PI / 2.0;
  return kHeadBearings[head] - fov / 2.0 + (index + 0.5) * fov / kRaysPerHead;
}

SimState InitialState(const Scene& scene, const SimConfig&) {
  SimState s;
  s.agent = scene.spawn;
  for (const auto& spec : scene.pedestrians) {
    PedestrianState p;
    p.position = spec.spawn;
    p.target = spec.goal;
    p.origin = spec.spawn;
    p.speed = spec.speed;
    s.pedestrians.push_back(p);
  }
  s.route_progress = AdvanceProgress(scene.gt_route, 0.0, scene.spawn.position());
  return s;
}

bool DiskIntersectsCircle(const Point2& c, double r, const Circle& circle) {
  return (c - circle.center).norm() < r + circle.radius;
}

bool DiskIntersectsBox(const Point2& c, double r, const Box& box) {
  const Point2 closest = c.cwiseMax(box.min).cwiseMin(box.max);
  return (c - closest).norm() < r;
}

bool AgentCollides(const Point2& center, double radius, const Scene& scene,
                   const std::vector<PedestrianState>& pedestrians, double pedestrian_radius) {
  // Broad phase on bounding boxes, narrow phase on exact distances.
  for (const auto& circle : scene.circles) {
    const double reach = radius + circle.radius;
    if (std::abs(center.x() - circle.center.x()) >= reach ||
        std::abs(center.y() - circle.center.y()) >= reach) {
      continue;
    }
    if (DiskIntersectsCircle(center, radius, circle)) return true;
  }
  for (const auto& box : scene.boxes) {
    if (center.x() <= box.min.x() - radius || center.x() >= box.max.x() + radius ||
        center.y() <= box.min.y() - radius || center.y() >= box.max.y() + radius) {
      continue;
    }
    if (DiskIntersectsBox(center, radius, box)) return true;
  }
  for (const auto& p : pedestrians) {
    if (DiskIntersectsCircle(center, radius, {p.position, pedestrian_radius})) return true;
  }
  return false;
}

double AdvanceProgress(const Polyline& route, double progress, const Point2& position) {
  const Projection proj = ProjectOnto(route, position, progress - kProgressLookBack,
                                      progress + kProgressLookAhead);
  return std::max(progress, proj.arc_position);
}

namespace {

void UpdatePedestrians(SimState& state, const Scene& scene, const SimConfig& config) {
  const Point2 agent = state.agent.position();
  const double ped_gap = 2.0 * config.pedestrian_radius + kPedestrianSpacing;
  const double agent_gap = config.agent_radius + config.pedestrian_radius + kPedestrianSpacing;
  for (std::size_t i = 0; i < state.pedestrians.size(); ++i) {
    PedestrianState& ped = state.pedestrians[i];
    if ((ped.target - ped.position).norm() < kPedestrianArrival) std::swap(ped.target, ped.origin);
    Point2 to_goal = ped.target - ped.position;
    const double dist = to_goal.norm();
    const Point2 dir = dist > 0.0 ? Point2(to_goal / dist) : Point2::Zero();

    // Repulsion from the agent and other pedestrians, applied sideways.
    Point2 push = Point2::Zero();
    auto repel = [&](const Point2& other) {
      const Point2 d = ped.position - other;
      const double n = d.norm();
      if (n >= config.pedestrian_repulsion) return;
      const double strength = (config.pedestrian_repulsion - n) / config.pedestrian_repulsion;
      Point2 away = n > 1e-9 ? Point2(d / n) : Point2(-dir.y(), dir.x());
      Point2 side = away - away.dot(dir) * dir;
      if (side.norm() < 1e-6) side = Point2(-dir.y(), dir.x());
      push += strength * side.normalized();
    };
    repel(agent);
    for (std::size_t j = 0; j < state.pedestrians.size(); ++j) {
      if (j != i) repel(state.pedestrians[j].position);
    }
    const double step = std::min(ped.speed * config.dt, dist);
    Point2 velocity = dir * ped.speed;
    if (push.norm() > 0.0) {
      const double m = std::min(1.0, push.norm());
      velocity = dir * ped.speed * (1.0 - 0.5 * m) + push.normalized() * ped.speed * m;
    }

    auto acceptable = [&](const Point2& cand) {
      if (!scene.InWalkable(cand)) return false;
      if ((cand - agent).norm() < agent_gap) return false;
      for (const auto& c : scene.circles) {
        if ((cand - c.center).norm() < c.radius + config.pedestrian_radius) return false;
      }
      for (const auto& b : scene.boxes) {
        if (DiskIntersectsBox(cand, config.pedestrian_radius, b)) return false;
      }
      for (std::size_t j = 0; j < state.pedestrians.size(); ++j) {
        if (j != i && (cand - state.pedestrians[j].position).norm() < ped_gap) return false;
      }
      return true;
    };
    const Point2 full = ped.position + velocity * config.dt;
    const Point2 straight = ped.position + dir * step;
    if (acceptable(full)) {
      ped.velocity = velocity;
      ped.position = full;
    } else if (acceptable(straight)) {
      ped.velocity = dir * ped.speed;
      ped.position = straight;
    } else {
      // Blocked ahead: sidestep so head-on encounters cannot deadlock.
      Point2 side = push.norm() > 0.0 ? Point2(push.normalized()) : Point2(-dir.y(), dir.x());
      const Point2 left = ped.position + side * ped.speed * config.dt;
      const Point2 right = ped.position - side * ped.speed * config.dt;
      if (acceptable(left)) {
        ped.velocity = side * ped.speed;
        ped.position = left;
      } else if (acceptable(right)) {
        ped.velocity = -side * ped.speed;
        ped.position = right;
      } else {
        ped.velocity = Point2::Zero();
      }
      // Goal occupied by someone else: turn around instead of waiting.
      if (dist < kPedestrianGiveUp) std::swap(ped.target, ped.origin);
    }
  }
}

}  // namespace

std::vector<Event> Step(SimState& state, const Scene& scene, Control control,
                        const SimConfig& config) {
  std::vector<Event> events;
  if (state.terminal) return events;
  ++state.tick;
  const double v = std::clamp(control.v, -config.max_speed, config.max_speed);
  const double omega = std::clamp(control.omega, -config.max_omega, config.max_omega);

  const Pose2 prev = state.agent;
  const Pose2 cand(prev.x + v * std::cos(prev.theta) * config.dt,
                   prev.y + v * std::sin(prev.theta) * config.dt, prev.theta + omega * config.dt);
  if (AgentCollides(cand.position(), config.agent_radius, scene, state.pedestrians,
                    config.pedestrian_radius)) {
    events.push_back({EventKind::kCollision, state.tick});
    state.agent_speed = 0.0;
  } else {
    state.path_length += (cand.position() - prev.position()).norm();
    state.agent = cand;
    state.agent_speed = v;
  }

  UpdatePedestrians(state, scene, config);

  const Point2 pos = state.agent.position();
  for (const auto& ped : state.pedestrians) {
    if ((ped.position - pos).norm() < config.near_miss_distance) {
      events.push_back({EventKind::kNearMiss, state.tick});
      break;
    }
  }

  const Projection proj =
      ProjectOnto(scene.gt_route, pos, state.route_progress - kProgressLookBack,
                  state.route_progress + kProgressLookAhead);
  state.route_progress = std::max(state.route_progress, proj.arc_position);
  if (proj.lateral_offset > config.corridor_half_width) {
    events.push_back({EventKind::kDeviation, state.tick});
  }

  if (!scene.InWalkable(pos)) {
    events.push_back({EventKind::kCrashOffWalkable, state.tick});
  } else if ((pos - scene.goal).norm() <= scene.goal_radius) {
    events.push_back({EventKind::kSuccess, state.tick});
  } else if (state.tick >= config.timeout_ticks) {
    events.push_back({EventKind::kTimeout, state.tick});
  }
  for (const auto& e : events) {
    if (IsTerminal(e.kind)) state.terminal = e.kind;
  }
  state.event_log.insert(state.event_log.end(), events.begin(), events.end());
  return events;
}

// ---------------------------------------------------------------------------
// Raycasting

namespace {

bool ClipConvex(const ConvexPolygon& poly, const Point2& o, const Point2& d, double& t0,
                double& t1) {
  t0 = -kInf;
  t1 = kInf;
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = poly.vertices[i];
    const Point2 e = poly.vertices[(i + 1) % n] - a;
    const Point2 inward(-e.y(), e.x());
    const double num = inward.dot(o - a);
    const double den = inward.dot(d);
    if (den == 0.0) {
      if (num < 0.0) return false;
      continue;
    }
    const double t = -num / den;
    if (den > 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return false;
  }
  return true;
}

double RayCircle(const Point2& o, const Point2& d, const Point2& c, double r) {
  const Point2 f = o - c;
  const double cc = f.squaredNorm() - r * r;
  if (cc <= 0.0) return 0.0;
  const double b = f.dot(d);
  const double disc = b * b - cc;
  if (disc < 0.0) return kInf;
  const double t = -b - std::sqrt(disc);
  return t >= 0.0 ? t : kInf;
}

double RayBox(const Point2& o, const Point2& d, const Box& box) {
  double t0 = -kInf;
  double t1 = kInf;
  for (int axis = 0; axis < 2; ++axis) {
    if (d[axis] == 0.0) {
      if (o[axis] < box.min[axis] || o[axis] > box.max[axis]) return kInf;
      continue;
    }
    double a = (box.min[axis] - o[axis]) / d[axis];
    double b = (box.max[axis] - o[axis]) / d[axis];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1 || t1 < 0.0) return kInf;
  return std::max(t0, 0.0);
}

}  // namespace

double WalkableExitDistance(const Scene& scene, const Point2& origin, const Point2& dir,
                            double max_range) {
  constexpr double kEps = 1e-9;
  std::vector<std::pair<double, double>> spans;
  for (const auto& poly : scene.walkable) {
    double t0, t1;
    if (ClipConvex(poly, origin, dir, t0, t1) && t1 >= 0.0) spans.emplace_back(t0, t1);
  }
  double reach = -1.0;
  for (const auto& [t0, t1] : spans) {
    if (t0 <= kEps) reach = std::max(reach, t1);
  }
  if (reach < 0.0) return 0.0;
  bool grown = true;
  while (grown && reach < max_range) {
    grown = false;
    for (const auto& [t0, t1] : spans) {
      if (t0 <= reach + kEps && t1 > reach) {
        reach = t1;
        grown = true;
      }
    }
  }
  return std::min(reach, max_range);
}

double CastRay(const Scene& scene, const std::vector<PedestrianState>& pedestrians,
               double pedestrian_radius, const Point2& origin, double angle, double max_range) {
  const Point2 d(std::cos(angle), std::sin(angle));
  double t = WalkableExitDistance(scene, origin, d, max_range);
  for (const auto& c : scene.circles) t = std::min(t, RayCircle(origin, d, c.center, c.radius));
  for (const auto& b : scene.boxes) t = std::min(t, RayBox(origin, d, b));
  for (const auto& p : pedestrians) {
    t = std::min(t, RayCircle(origin, d, p.position, pedestrian_radius));
  }
  return std::clamp(t, 1e-3, max_range);
}

Observation Observe(const SimState& state, const Scene& scene, const SimConfig& config) {
  Observation obs;
  const Point2 origin = state.agent.position();
  for (int h = 0; h < kCameraHeads; ++h) {
    for (int j = 0; j < kRaysPerHead; ++j) {
      obs.depths[h * kRaysPerHead + j] =
          CastRay(scene, state.pedestrians, config.pedestrian_radius, origin,
                  state.agent.theta + RayBearing(h, j), config.ray_range);
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Trajectory execution

ExecutionResult ExecuteTrajectory(SimState& state, const Scene& scene,
                                  const PlannedTrajectory& trajectory, const SimConfig& config) {
  ExecutionResult result;
  if (state.terminal) return result;
  const Pose2 frame = state.agent;
  std::vector<Point2> pts{frame.position()};
  for (const auto& w : trajectory.waypoints) pts.push_back(FromEgocentric(w.position(), frame));
  const Polyline path(std::move(pts), /*allow_degenerate=*/true);
  const double v_nom = std::clamp(trajectory.PathLength() / config.trajectory_horizon_time, 0.0,
                                  config.max_speed);
  const double done_radius = std::max(0.05, v_nom * config.dt);
  double along = 0.0;

  while (!state.terminal && result.ticks < config.max_ticks_per_query &&
         result.traveled < config.max_step_distance - 1e-9) {
    Control control;
    if (v_nom > 1e-6 && path.length() > 0.0) {
      along = ProjectOnto(path, state.agent.position(), along, along + 1.0).arc_position;
      if (path.length() - along < done_radius &&
          (path.back() - state.agent.position()).norm() < done_radius + 0.05) {
        break;
      }
      const Point2 target = path.PointAt(along + config.lookahead);
      const Point2 local = ToEgocentric(target, state.agent);
      const double bearing = std::atan2(local.y(), local.x());
      if (std::abs(bearing) > kTurnInPlace) {
        control = {0.0, std::clamp(bearing / config.dt, -config.max_omega, config.max_omega)};
      } else {
        const double curvature = 2.0 * local.y() / local.squaredNorm();
        control = {v_nom, v_nom * curvature};
      }
    }
    const Point2 before = state.agent.position();
    auto events = Step(state, scene, control, config);
    result.events.insert(result.events.end(), events.begin(), events.end());
    result.traveled += (state.agent.position() - before).norm();
    ++result.ticks;
  }
  return result;
}

}  // namespace urbannav
