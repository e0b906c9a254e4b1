#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "urbannav/geom.h"

namespace urbannav {

enum class SceneKind { kStraight, kL, kC, kIntersection, kObstacleCourse };

const char* ToString(SceneKind kind);
SceneKind SceneKindFromString(const std::string& s);

/// Convex polygon with counter-clockwise vertices.
struct ConvexPolygon {
  std::vector<Point2> vertices;

  /// Inclusive containment with tolerance `eps` (meters, outward).
  bool Contains(const Point2& p, double eps = 1e-9) const;
  bool operator==(const ConvexPolygon&) const = default;
};

struct Circle {
  Point2 center;
  double radius = 0.0;
  bool operator==(const Circle&) const = default;
};

/// Axis-aligned box.
struct Box {
  Point2 min;
  Point2 max;
  bool operator==(const Box&) const = default;
};

struct PedestrianSpec {
  Point2 spawn;
  Point2 goal;
  double speed = 0.0;
  bool operator==(const PedestrianSpec&) const = default;
};

struct Scene {
  std::uint64_t seed = 0;
  SceneKind kind = SceneKind::kStraight;
  std::vector<ConvexPolygon> walkable;
  std::vector<Circle> circles;
  std::vector<Box> boxes;
  Polyline gt_route{{Point2(0, 0), Point2(1, 0)}};
  // Route handed to the policy; the ground-truth route when absent.
  std::optional<Polyline> nav_route;
  Pose2 spawn;
  Point2 goal = Point2::Zero();
  double goal_radius = 2.0;
  std::vector<PedestrianSpec> pedestrians;

  bool InWalkable(const Point2& p) const;
  /// True if the point lies inside any static obstacle.
  bool InObstacle(const Point2& p) const;
  const Polyline& NavigationRoute() const { return nav_route ? *nav_route : gt_route; }
  /// Axis-aligned bounds of the walkable region.
  Eigen::AlignedBox2d Bounds() const;

  bool operator==(const Scene& other) const;
};

struct Difficulty {
  int obstacles = -1;    // -1: kind default
  int pedestrians = -1;  // -1: kind default
};

/// Procedural scene, deterministic in (seed, kind, difficulty). Every
/// returned scene is feasible for the planner. Throws GenerationFailed
/// after 20 infeasible attempts.
Scene GenerateScene(std::uint64_t seed, SceneKind kind, const Difficulty& difficulty = {});

/// Rectangle helper (counter-clockwise).
ConvexPolygon MakeRect(double x0, double y0, double x1, double y1);

/// Oriented rectangle of the given width centered on segment [a, b].
ConvexPolygon MakeOrientedRect(const Point2& a, const Point2& b, double width);

/// Curved corridor used for the route-offset experiment: straight entry,
/// right-hand arc, straight exit, constant width.
struct CurvedCorridorShape {
  double width = 8.0;
  double entry = 10.0;
  double radius = 15.0;
  double sweep = 2.0 * M_PI / 3.0;
  double exit = 20.0;
};

Scene MakeCurvedCorridor(const CurvedCorridorShape& shape, std::uint64_t seed = 0);

/// Copy of `route` shifted sideways by `offset` meters (positive to the
/// left of the direction of travel), reduced to a coarse polyline with
/// vertices every `coarse_spacing` meters.
Polyline OffsetRoute(const Polyline& route, double offset, double coarse_spacing = 10.0);

}  // namespace urbannav
