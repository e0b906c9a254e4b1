#include "urbannav/scene.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "urbannav/error.h"
#include "urbannav/planner.h"
#include "urbannav/route.h"

namespace urbannav {

const char* ToString(SceneKind kind) {
  switch (kind) {
    case SceneKind::kStraight:
      return "straight";
    case SceneKind::kL:
      return "L";
    case SceneKind::kC:
      return "C";
    case SceneKind::kIntersection:
      return "intersection";
    case SceneKind::kObstacleCourse:
      return "obstacle_course";
  }
  return "straight";
}

SceneKind SceneKindFromString(const std::string& s) {
  if (s == "straight") return SceneKind::kStraight;
  if (s == "L") return SceneKind::kL;
  if (s == "C") return SceneKind::kC;
  if (s == "intersection") return SceneKind::kIntersection;
  if (s == "obstacle_course") return SceneKind::kObstacleCourse;
  throw ParameterError("unknown scene kind '" + s + "'");
}

bool ConvexPolygon::Contains(const Point2& p, double eps) const {
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = vertices[i];
    const Point2& b = vertices[(i + 1) % n];
    const Point2 e = b - a;
    const double len = e.norm();
    if (len <= 0.0) continue;
    // Signed distance to the left of the edge.
    if (Cross(e, p - a) / len < -eps) return false;
  }
  return true;
}

bool Scene::InWalkable(const Point2& p) const {
  for (const auto& poly : walkable) {
    if (poly.Contains(p)) return true;
  }
  return false;
}

bool Scene::InObstacle(const Point2& p) const {
  for (const auto& c : circles) {
    if ((p - c.center).norm() <= c.radius) return true;
  }
  for (const auto& b : boxes) {
    if (p.x() >= b.min.x() && p.x() <= b.max.x() && p.y() >= b.min.y() && p.y() <= b.max.y()) {
      return true;
    }
  }
  return false;
}

Eigen::AlignedBox2d Scene::Bounds() const {
  Eigen::AlignedBox2d box;
  for (const auto& poly : walkable) {
    for (const auto& v : poly.vertices) box.extend(v);
  }
  return box;
}

bool Scene::operator==(const Scene& o) const {
  return seed == o.seed && kind == o.kind && walkable == o.walkable && circles == o.circles &&
         boxes == o.boxes && gt_route == o.gt_route && nav_route == o.nav_route &&
         spawn == o.spawn && goal == o.goal && goal_radius == o.goal_radius &&
         pedestrians == o.pedestrians;
}

ConvexPolygon MakeRect(double x0, double y0, double x1, double y1) {
  return {{Point2(x0, y0), Point2(x1, y0), Point2(x1, y1), Point2(x0, y1)}};
}

ConvexPolygon MakeOrientedRect(const Point2& a, const Point2& b, double width) {
  const Point2 dir = (b - a).normalized();
  const Point2 n(-dir.y(), dir.x());
  const double h = width / 2.0;
  return {{a - h * n, b - h * n, b + h * n, a + h * n}};
}

namespace {

constexpr int kMaxAttempts = 20;

struct Rng {
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double Uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  int Int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
  bool Coin() { return Int(0, 1) == 1; }
  std::mt19937_64 engine;
};

Polyline DenseLine(const Point2& a, const Point2& b) { return Polyline({a, b}); }

Scene Straight(Rng& rng) {
  Scene s;
  const double w = rng.Uniform(6.0, 8.0);
  const double len = rng.Uniform(30.0, 50.0);
  s.walkable = {MakeRect(-2.0, -w / 2.0, len + 2.0, w / 2.0)};
  s.gt_route = DenseLine({0.0, 0.0}, {len, 0.0});
  return s;
}

Scene LShape(Rng& rng) {
  Scene s;
  const double w = rng.Uniform(6.0, 8.0);
  const double a = rng.Uniform(20.0, 30.0);
  const double b = rng.Uniform(20.0, 30.0);
  const double sign = rng.Coin() ? 1.0 : -1.0;
  s.walkable.push_back(MakeRect(-2.0, -w / 2.0, a + w / 2.0, w / 2.0));
  if (sign > 0) {
    s.walkable.push_back(MakeRect(a - w / 2.0, -w / 2.0, a + w / 2.0, b + 2.0));
  } else {
    s.walkable.push_back(MakeRect(a - w / 2.0, -b - 2.0, a + w / 2.0, w / 2.0));
  }
  s.gt_route = Polyline({Point2(0, 0), Point2(a, 0), Point2(a, sign * b)});
  return s;
}

Scene Intersection(Rng& rng) {
  Scene s;
  const double w = rng.Uniform(6.0, 8.0);
  const double entry = rng.Uniform(15.0, 25.0);
  const double arm = 22.0;
  const double exit = rng.Uniform(14.0, 19.0);
  s.walkable.push_back(MakeRect(-entry - 2.0, -w / 2.0, arm, w / 2.0));
  s.walkable.push_back(MakeRect(-w / 2.0, -arm, w / 2.0, arm));
  const int branch = rng.Int(0, 2);
  Point2 end(exit, 0.0);
  if (branch == 1) end = Point2(0.0, exit);
  if (branch == 2) end = Point2(0.0, -exit);
  if (branch == 0) {
    s.gt_route = Polyline({Point2(-entry, 0), end});
  } else {
    s.gt_route = Polyline({Point2(-entry, 0), Point2(0, 0), end});
  }
  return s;
}

void PlaceObstacles(Scene& s, Rng& rng, int count, double width) {
  const double len = s.gt_route.length();
  int placed = 0;
  for (int tries = 0; tries < 200 && placed < count; ++tries) {
    const double along = rng.Uniform(6.0, len - 6.0);
    const Point2 base = s.gt_route.PointAt(along);
    const Point2 tan = s.gt_route.TangentAt(along);
    const Point2 nrm(-tan.y(), tan.x());
    const double lateral = rng.Uniform(-width / 2.0 + 0.6, width / 2.0 - 0.6);
    const Point2 c = base + lateral * nrm;
    const bool circle = rng.Coin();
    const double size = circle ? rng.Uniform(0.3, 0.8) : rng.Uniform(0.3, 0.8);
    // Keep a gap between obstacles so each one can be judged separately.
    bool clash = false;
    for (const auto& o : s.circles) clash |= (o.center - c).norm() < o.radius + size + 1.5;
    for (const auto& o : s.boxes) clash |= (0.5 * (o.min + o.max) - c).norm() < size * 1.5 + 2.5;
    if (clash) continue;
    if (circle) {
      s.circles.push_back({c, size});
    } else {
      s.boxes.push_back({c - Point2(size, size), c + Point2(size, size)});
    }
    ++placed;
  }
}

void PlacePedestrians(Scene& s, Rng& rng, int count) {
  const double len = s.gt_route.length();
  for (int tries = 0; tries < 100 && static_cast<int>(s.pedestrians.size()) < count; ++tries) {
    const double a = rng.Uniform(std::min(12.0, len * 0.4), len - 3.0);
    const double b = rng.Uniform(3.0, len - 3.0);
    auto offset = [&](double along) -> Point2 {
      const Point2 t = s.gt_route.TangentAt(along);
      return s.gt_route.PointAt(along) + rng.Uniform(-2.5, 2.5) * Point2(-t.y(), t.x());
    };
    PedestrianSpec p{offset(a), offset(b), rng.Uniform(0.4, 0.9)};
    if ((p.spawn - p.goal).norm() < 5.0) continue;
    if (!s.InWalkable(p.spawn) || !s.InWalkable(p.goal)) continue;
    if ((p.spawn - s.spawn.position()).norm() < 6.0) continue;
    bool blocked = false;
    for (const auto& c : s.circles) blocked |= (c.center - p.spawn).norm() < c.radius + 0.8;
    for (const auto& bx : s.boxes) {
      blocked |= (p.spawn.cwiseMax(bx.min).cwiseMin(bx.max) - p.spawn).norm() < 0.8;
    }
    for (const auto& q : s.pedestrians) blocked |= (q.spawn - p.spawn).norm() < 1.0;
    if (blocked) continue;
    s.pedestrians.push_back(p);
  }
}

void FinishRoute(Scene& s) {
  const Point2 t = s.gt_route.TangentAt(0.0);
  s.spawn = Pose2(s.gt_route.front().x(), s.gt_route.front().y(), std::atan2(t.y(), t.x()));
  s.goal = s.gt_route.back();
}

bool Feasible(const Scene& s, double inflation) {
  try {
    PlannerConfig cfg;
    cfg.inflation = inflation;
    cfg.shortcut = false;
    PlanPath(s, cfg);
    return true;
  } catch (const InfeasibleScene&) {
    return false;
  }
}

}  // namespace

Scene MakeCurvedCorridor(const CurvedCorridorShape& shape, std::uint64_t seed) {
  Scene s;
  s.seed = seed;
  s.kind = SceneKind::kC;
  const double h = shape.width / 2.0;
  s.walkable.push_back(MakeRect(-2.0, -h, shape.entry, h));
  const Point2 center(shape.entry, -shape.radius);
  auto arc_point = [&](double radius, double alpha) -> Point2 {
    return Point2(center.x() + radius * std::sin(alpha), center.y() + radius * std::cos(alpha));
  };
  const int pieces = std::max(1, static_cast<int>(std::ceil(shape.sweep / (M_PI / 60.0))));
  std::vector<Point2> route{Point2(0, 0)};
  for (int i = 0; i < pieces; ++i) {
    const double a0 = shape.sweep * i / pieces;
    const double a1 = shape.sweep * (i + 1) / pieces;
    // Clockwise turn: inner arc is on the right; list vertices CCW.
    s.walkable.push_back({{arc_point(shape.radius - h, a0), arc_point(shape.radius - h, a1),
                           arc_point(shape.radius + h, a1), arc_point(shape.radius + h, a0)}});
  }
  const int route_samples = std::max(2, static_cast<int>(std::ceil(shape.sweep / (M_PI / 180.0))));
  for (int i = 0; i <= route_samples; ++i) {
    route.push_back(arc_point(shape.radius, shape.sweep * i / route_samples));
  }
  const Point2 arc_end = route.back();
  const Point2 heading(std::cos(-shape.sweep), std::sin(-shape.sweep));
  const Point2 exit_end = arc_end + shape.exit * heading;
  s.walkable.push_back(MakeOrientedRect(arc_end, exit_end + 2.0 * heading, shape.width));
  route.push_back(exit_end);
  s.gt_route = Polyline(std::move(route));
  FinishRoute(s);
  return s;
}

Scene GenerateScene(std::uint64_t seed, SceneKind kind, const Difficulty& difficulty) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(HashSeed(seed, attempt));
    Scene s;
    double width = 8.0;
    int default_obstacles = 0;
    int default_peds = rng.Int(0, 2);
    switch (kind) {
      case SceneKind::kStraight:
        s = Straight(rng);
        break;
      case SceneKind::kL:
        s = LShape(rng);
        break;
      case SceneKind::kC: {
        CurvedCorridorShape shape;
        shape.entry = rng.Uniform(6.0, 12.0);
        shape.radius = rng.Uniform(12.0, 18.0);
        shape.sweep = rng.Uniform(M_PI / 2.0, 5.0 * M_PI / 6.0);
        shape.exit = rng.Uniform(12.0, 22.0);
        s = MakeCurvedCorridor(shape);
        default_peds = rng.Int(0, 1);
        break;
      }
      case SceneKind::kIntersection:
        s = Intersection(rng);
        break;
      case SceneKind::kObstacleCourse:
        s = Straight(rng);
        default_obstacles = rng.Int(3, 6);
        default_peds = rng.Int(0, 1);
        break;
    }
    if (kind != SceneKind::kC) {
      const auto& first = s.walkable.front().vertices;
      width = first[2].y() - first[0].y();
    }
    s.seed = seed;
    s.kind = kind;
    FinishRoute(s);
    const int obstacles = difficulty.obstacles >= 0 ? difficulty.obstacles : default_obstacles;
    const int peds = difficulty.pedestrians >= 0 ? difficulty.pedestrians : default_peds;
    if (obstacles > 0) PlaceObstacles(s, rng, obstacles, width);
    PlacePedestrians(s, rng, peds);
    // A 1.2 m passable gap exists iff the plan survives 0.6 m inflation.
    if (!Feasible(s, 0.6)) continue;
    return s;
  }
  throw GenerationFailed("no feasible scene after " + std::to_string(kMaxAttempts) + " attempts");
}

Polyline OffsetRoute(const Polyline& route, double offset, double coarse_spacing) {
  const Polyline coarse = Resample(route, coarse_spacing);
  std::vector<Point2> out;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const double s = std::min(route.length(), static_cast<double>(i) * coarse_spacing);
    const double at = i + 1 == coarse.size() ? route.length() : s;
    const Point2 t = route.TangentAt(std::min(at, route.length() - 1e-9));
    out.push_back(coarse[i] + offset * Point2(-t.y(), t.x()));
  }
  return Polyline(std::move(out));
}

}  // namespace urbannav
