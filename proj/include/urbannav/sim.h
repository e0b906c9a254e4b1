#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "urbannav/geom.h"
#include "urbannav/scene.h"

namespace urbannav {

struct SimConfig {
  double dt = 0.1;
  double agent_radius = 0.3;
  double pedestrian_radius = 0.3;
  double max_speed = 2.0;
  double max_omega = 1.5;
  double corridor_half_width = 3.0;
  double near_miss_distance = 0.8;
  double pedestrian_repulsion = 1.5;
  int timeout_ticks = 2000;
  double ray_range = 15.0;
  // Trajectory execution
  double max_step_distance = 1.5;
  double trajectory_horizon_time = 2.0;
  int max_ticks_per_query = 20;
  double lookahead = 0.6;
};

enum class EventKind {
  kCollision,
  kDeviation,
  kNearMiss,
  kSuccess,
  kTimeout,
  kCrashOffWalkable,
  kAborted,
};

const char* ToString(EventKind kind);
EventKind EventKindFromString(const std::string& s);
bool IsTerminal(EventKind kind);

struct Event {
  EventKind kind = EventKind::kCollision;
  std::int64_t tick = 0;
  bool operator==(const Event&) const = default;
};

struct PedestrianState {
  Point2 position = Point2::Zero();
  Point2 velocity = Point2::Zero();
  Point2 target = Point2::Zero();  // current goal
  Point2 origin = Point2::Zero();  // swapped with target on arrival
  double speed = 0.0;
  bool operator==(const PedestrianState&) const = default;
};

struct SimState {
  Pose2 agent;
  double agent_speed = 0.0;
  std::vector<PedestrianState> pedestrians;
  std::int64_t tick = 0;
  double route_progress = 0.0;
  std::vector<Event> event_log;
  std::optional<EventKind> terminal;
  double path_length = 0.0;  // distance traveled by the agent

  bool operator==(const SimState&) const = default;
};

struct Control {
  double v = 0.0;
  double omega = 0.0;
  bool operator==(const Control&) const = default;
};

inline constexpr int kCameraHeads = 4;
inline constexpr int kRaysPerHead = 32;
inline constexpr int kRayCount = kCameraHeads * kRaysPerHead;

/// Heads: front, left, right, rear.
inline constexpr std::array<double, kCameraHeads> kHeadBearings = {0.0, M_PI / 2.0, -M_PI / 2.0,
                                                                   M_PI};

/// Ray depths in meters, head-major (head h, ray j at index h * 32 + j).
struct Observation {
  Eigen::Matrix<double, kRayCount, 1> depths = Eigen::Matrix<double, kRayCount, 1>::Zero();
  bool operator==(const Observation& o) const { return depths == o.depths; }
};

/// Agent-relative bearing of ray (head, index).
double RayBearing(int head, int index);

SimState InitialState(const Scene& scene, const SimConfig& config = {});

/// Advances one tick. No-op once a terminal event occurred. Returns the
/// events raised during this tick (also appended to the event log).
std::vector<Event> Step(SimState& state, const Scene& scene, Control control,
                        const SimConfig& config = {});

Observation Observe(const SimState& state, const Scene& scene, const SimConfig& config = {});

struct ExecutionResult {
  std::vector<Event> events;
  int ticks = 0;
  double traveled = 0.0;
};

/// Tracks an egocentric trajectory with pure pursuit until 1.5 m of travel,
/// the trajectory end, the per-query tick budget, or a terminal event.
ExecutionResult ExecuteTrajectory(SimState& state, const Scene& scene,
                                  const PlannedTrajectory& trajectory,
                                  const SimConfig& config = {});

// Geometry queries shared with tests.

/// Disk intersection against every static obstacle and pedestrian. Touching
/// is not a collision.
bool AgentCollides(const Point2& center, double radius, const Scene& scene,
                   const std::vector<PedestrianState>& pedestrians, double pedestrian_radius);

bool DiskIntersectsCircle(const Point2& c, double r, const Circle& circle);
bool DiskIntersectsBox(const Point2& c, double r, const Box& box);

/// First hit distance of a ray against the walkable boundary, obstacles and
/// pedestrians, clamped to (0, max_range].
double CastRay(const Scene& scene, const std::vector<PedestrianState>& pedestrians,
               double pedestrian_radius, const Point2& origin, double angle, double max_range);

/// Distance along the ray until it leaves the union of walkable polygons.
double WalkableExitDistance(const Scene& scene, const Point2& origin, const Point2& dir,
                            double max_range);

/// Windowed monotone progress of `position` along `route`.
double AdvanceProgress(const Polyline& route, double progress, const Point2& position);

}  // namespace urbannav
