#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace urbannav {

using Point2 = Eigen::Vector2d;

/// Wraps an angle into (-pi, pi].
double NormalizeAngle(double angle);

/// Planar rigid pose. The heading is kept normalized.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_in, double y_in, double theta_in)
      : x(x_in), y(y_in), theta(NormalizeAngle(theta_in)) {}

  Point2 position() const { return {x, y}; }
  bool operator==(const Pose2&) const = default;
};

/// 2D cross product (z component).
inline double Cross(const Point2& a, const Point2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

/// Ordered point sequence with cached cumulative arc length.
class Polyline {
 public:
  /// Throws InvalidPolyline for fewer than two points, non-finite
  /// coordinates, or zero total length (unless `allow_degenerate`).
  explicit Polyline(std::vector<Point2> points, bool allow_degenerate = false);

  const std::vector<Point2>& points() const { return points_; }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  std::size_t size() const { return points_.size(); }
  const Point2& front() const { return points_.front(); }
  const Point2& back() const { return points_.back(); }

  /// Arc length from the first point to vertex `i`.
  double cumulative(std::size_t i) const { return cumulative_[i]; }
  const std::vector<double>& cumulative() const { return cumulative_; }
  double length() const { return cumulative_.back(); }

  /// Point at arc position `s`, clamped to [0, length()].
  Point2 PointAt(double s) const;
  /// Unit tangent at arc position `s` (direction of the containing segment).
  Point2 TangentAt(double s) const;
  /// Index of the segment containing arc position `s`.
  std::size_t SegmentAt(double s) const;
  /// Sub-polyline covering [s0, s1]; degenerate slices are allowed.
  Polyline Slice(double s0, double s1) const;

  bool operator==(const Polyline& other) const { return points_ == other.points_; }

 private:
  std::vector<Point2> points_;
  std::vector<double> cumulative_;
};

/// Total Euclidean length.
double ArcLength(const Polyline& p);

/// Points every `step` meters of arc length along `p`, plus its endpoint.
/// Output points lie on `p`. Throws ParameterError for step <= 0.
Polyline Resample(const Polyline& p, double step);

/// Like Resample, but consecutive output points are exactly `step` apart
/// in straight-line distance (the last point is the endpoint of `p`).
Polyline ResampleChord(const Polyline& p, double step);

Point2 ToEgocentric(const Point2& point, const Pose2& agent);
Point2 FromEgocentric(const Point2& point, const Pose2& agent);
std::vector<Point2> ToEgocentric(std::span<const Point2> points, const Pose2& agent);
std::vector<Point2> FromEgocentric(std::span<const Point2> points, const Pose2& agent);
Pose2 ToEgocentric(const Pose2& pose, const Pose2& agent);
Pose2 FromEgocentric(const Pose2& pose, const Pose2& agent);

struct Projection {
  double arc_position = 0.0;
  double lateral_offset = 0.0;
};

/// Closest point of `p` to `q`; ties go to the smaller arc position.
Projection ProjectOnto(const Polyline& p, const Point2& q);
/// Same, restricted to the arc window [s_min, s_max].
Projection ProjectOnto(const Polyline& p, const Point2& q, double s_min, double s_max);

/// Exact sign (+1 left turn, -1 right turn, 0 collinear) of the orientation
/// of c relative to the directed line a -> b.
int Orientation(const Point2& a, const Point2& b, const Point2& c);

/// Closed-segment intersection test for [a, b] and [c, d].
bool SegmentsIntersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

/// Distance from `q` to the closed segment [a, b].
double PointSegmentDistance(const Point2& q, const Point2& a, const Point2& b);

/// N egocentric SE(2) waypoints. Flattened it is the vector (x1, y1, th1, ...).
struct PlannedTrajectory {
  std::vector<Pose2> waypoints;

  Eigen::VectorXd Flatten() const;
  static PlannedTrajectory FromFlat(const Eigen::Ref<const Eigen::VectorXd>& flat);
  /// Sum of distances from the origin through every waypoint.
  double PathLength() const;
};

/// Hausdorff distance between two polylines, measured on their vertices
/// against the other curve's segments.
double HausdorffDistance(const Polyline& a, const Polyline& b);

}  // namespace urbannav
