#include "urbannav/geom.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "urbannav/error.h"

namespace urbannav {

double NormalizeAngle(double angle) {
  double a = std::fmod(angle + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

Polyline::Polyline(std::vector<Point2> points, bool allow_degenerate)
    : points_(std::move(points)) {
  if (points_.size() < 2) {
    throw InvalidPolyline("polyline needs at least 2 points, got " +
                          std::to_string(points_.size()));
  }
  cumulative_.resize(points_.size());
  cumulative_[0] = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!points_[i].allFinite()) {
      throw InvalidPolyline("non-finite coordinate at point " + std::to_string(i));
    }
    if (i > 0) cumulative_[i] = cumulative_[i - 1] + (points_[i] - points_[i - 1]).norm();
  }
  if (!allow_degenerate && cumulative_.back() <= 0.0) {
    throw InvalidPolyline("polyline has zero length");
  }
}

std::size_t Polyline::SegmentAt(double s) const {
  if (s <= 0.0) return 0;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
  if (idx == 0) return 0;
  return std::min(idx - 1, points_.size() - 2);
}

Point2 Polyline::PointAt(double s) const {
  if (s <= 0.0) return points_.front();
  if (s >= length()) return points_.back();
  const std::size_t i = SegmentAt(s);
  const double seg = cumulative_[i + 1] - cumulative_[i];
  if (seg <= 0.0) return points_[i];
  const double t = (s - cumulative_[i]) / seg;
  return points_[i] + t * (points_[i + 1] - points_[i]);
}

Point2 Polyline::TangentAt(double s) const {
  std::size_t i = SegmentAt(std::clamp(s, 0.0, length()));
  // Skip zero-length segments forward, then backward.
  std::size_t j = i;
  while (j + 1 < points_.size() && (points_[j + 1] - points_[j]).norm() <= 0.0) ++j;
  if (j + 1 >= points_.size()) {
    j = i;
    while (j > 0 && (points_[j + 1] - points_[j]).norm() <= 0.0) --j;
  }
  const Point2 d = points_[std::min(j + 1, points_.size() - 1)] - points_[j];
  const double n = d.norm();
  if (n <= 0.0) return Point2(1.0, 0.0);
  return d / n;
}

Polyline Polyline::Slice(double s0, double s1) const {
  s0 = std::clamp(s0, 0.0, length());
  s1 = std::clamp(s1, s0, length());
  std::vector<Point2> out;
  out.push_back(PointAt(s0));
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (cumulative_[i] > s0 && cumulative_[i] < s1) out.push_back(points_[i]);
  }
  out.push_back(PointAt(s1));
  return Polyline(std::move(out), /*allow_degenerate=*/true);
}

double ArcLength(const Polyline& p) { return p.length(); }

Polyline Resample(const Polyline& p, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw ParameterError("resample step must be positive");
  }
  const double total = p.length();
  const double eps = 1e-9 * std::max(1.0, total);
  std::vector<Point2> out;
  std::size_t seg = 0;
  for (long k = 0;; ++k) {
    const double s = static_cast<double>(k) * step;
    if (s >= total - eps) break;
    while (seg + 2 < p.size() && p.cumulative(seg + 1) <= s) ++seg;
    const double len = p.cumulative(seg + 1) - p.cumulative(seg);
    const double t = len > 0.0 ? (s - p.cumulative(seg)) / len : 0.0;
    out.push_back(p[seg] + t * (p[seg + 1] - p[seg]));
  }
  out.push_back(p.back());
  if (out.size() < 2) out.insert(out.begin(), p.front());
  return Polyline(std::move(out), /*allow_degenerate=*/true);
}

Polyline ResampleChord(const Polyline& p, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw ParameterError("resample step must be positive");
  }
  std::vector<Point2> out{p.front()};
  Point2 center = p.front();
  std::size_t seg = 0;
  double t_start = 0.0;
  const double r2 = step * step;
  while (seg + 1 < p.size()) {
    const Point2 a = p[seg];
    const Point2 d = p[seg + 1] - a;
    const double dd = d.squaredNorm();
    bool found = false;
    if (dd > 0.0) {
      // |a + t d - center|^2 = r^2, take the exit (larger) root.
      const Point2 f = a - center;
      const double b = f.dot(d);
      const double c = f.squaredNorm() - r2;
      const double disc = b * b - dd * c;
      if (disc >= 0.0) {
        const double t = (-b + std::sqrt(disc)) / dd;
        if (t >= t_start && t <= 1.0) {
          center = a + t * d;
          out.push_back(center);
          t_start = t;
          found = true;
        }
      }
    }
    if (!found) {
      ++seg;
      t_start = 0.0;
    }
  }
  if ((p.back() - out.back()).norm() > 1e-9 || out.size() < 2) out.push_back(p.back());
  return Polyline(std::move(out), /*allow_degenerate=*/true);
}

Point2 ToEgocentric(const Point2& point, const Pose2& agent) {
  const double c = std::cos(agent.theta);
  const double s = std::sin(agent.theta);
  const double dx = point.x() - agent.x;
  const double dy = point.y() - agent.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Point2 FromEgocentric(const Point2& point, const Pose2& agent) {
  const double c = std::cos(agent.theta);
  const double s = std::sin(agent.theta);
  return {agent.x + c * point.x() - s * point.y(), agent.y + s * point.x() + c * point.y()};
}

std::vector<Point2> ToEgocentric(std::span<const Point2> points, const Pose2& agent) {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(ToEgocentric(p, agent));
  return out;
}

std::vector<Point2> FromEgocentric(std::span<const Point2> points, const Pose2& agent) {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(FromEgocentric(p, agent));
  return out;
}

Pose2 ToEgocentric(const Pose2& pose, const Pose2& agent) {
  const Point2 p = ToEgocentric(pose.position(), agent);
  return Pose2(p.x(), p.y(), pose.theta - agent.theta);
}

Pose2 FromEgocentric(const Pose2& pose, const Pose2& agent) {
  const Point2 p = FromEgocentric(pose.position(), agent);
  return Pose2(p.x(), p.y(), pose.theta + agent.theta);
}

Projection ProjectOnto(const Polyline& p, const Point2& q) {
  return ProjectOnto(p, q, 0.0, p.length());
}

Projection ProjectOnto(const Polyline& p, const Point2& q, double s_min, double s_max) {
  s_min = std::clamp(s_min, 0.0, p.length());
  s_max = std::clamp(s_max, s_min, p.length());
  Projection best{s_min, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    const double c0 = p.cumulative(i);
    const double c1 = p.cumulative(i + 1);
    if (c1 < s_min || c0 > s_max) continue;
    const Point2 a = p[i];
    const Point2 d = p[i + 1] - a;
    const double len = c1 - c0;
    double t = 0.0;
    if (len > 0.0) t = (q - a).dot(d) / (len * len);
    double s = c0 + std::clamp(t, 0.0, 1.0) * len;
    s = std::clamp(s, std::max(c0, s_min), std::min(c1, s_max));
    const Point2 foot = len > 0.0 ? Point2(a + ((s - c0) / len) * d) : a;
    const double dist = (q - foot).norm();
    if (dist < best.lateral_offset) best = {s, dist};
  }
  return best;
}

// Adds `x` to a nonoverlapping expansion without rounding (two-sum chain).
namespace {

void GrowExpansion(std::vector<double>& e, double x) {
  std::size_t out = 0;
  for (double& component : e) {
    const double sum = x + component;
    const double bv = sum - x;
    const double err = (x - (sum - bv)) + (component - bv);
    if (err != 0.0) e[out++] = err;
    x = sum;
  }
  e.resize(out);
  if (x != 0.0) e.push_back(x);
}

}  // namespace

// Sign of the orientation determinant. The floating-point value decides
// unless it is within its rounding-error bound; then the six products are
// summed exactly, so collinear inputs give exactly 0.
int Orientation(const Point2& a, const Point2& b, const Point2& c) {
  const double left = (b.x() - a.x()) * (c.y() - a.y());
  const double right = (b.y() - a.y()) * (c.x() - a.x());
  const double det = left - right;
  const double bound = 3.3306690738754716e-16 * (std::abs(left) + std::abs(right));
  if (det > bound) return 1;
  if (-det > bound) return -1;

  // det = bx*cy - bx*ay - ax*cy - by*cx + by*ax + ay*cx
  const double terms[6][2] = {{b.x(), c.y()},  {-b.x(), a.y()}, {-a.x(), c.y()},
                              {-b.y(), c.x()}, {b.y(), a.x()},  {a.y(), c.x()}};
  std::vector<double> e;
  for (const auto& t : terms) {
    const double hi = t[0] * t[1];
    const double lo = std::fma(t[0], t[1], -hi);
    GrowExpansion(e, lo);
    GrowExpansion(e, hi);
  }
  if (e.empty()) return 0;
  return e.back() > 0.0 ? 1 : -1;
}

namespace {

bool OnSegment(const Point2& a, const Point2& b, const Point2& q) {
  return std::min(a.x(), b.x()) <= q.x() && q.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= q.y() && q.y() <= std::max(a.y(), b.y());
}

}  // namespace

bool SegmentsIntersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const int o1 = Orientation(a, b, c);
  const int o2 = Orientation(a, b, d);
  const int o3 = Orientation(c, d, a);
  const int o4 = Orientation(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && OnSegment(a, b, c)) return true;
  if (o2 == 0 && OnSegment(a, b, d)) return true;
  if (o3 == 0 && OnSegment(c, d, a)) return true;
  if (o4 == 0 && OnSegment(c, d, b)) return true;
  return false;
}

double PointSegmentDistance(const Point2& q, const Point2& a, const Point2& b) {
  const Point2 d = b - a;
  const double dd = d.squaredNorm();
  if (dd <= 0.0) return (q - a).norm();
  const double t = std::clamp((q - a).dot(d) / dd, 0.0, 1.0);
  return (q - (a + t * d)).norm();
}

Eigen::VectorXd PlannedTrajectory::Flatten() const {
  Eigen::VectorXd out(3 * waypoints.size());
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    out[3 * i] = waypoints[i].x;
    out[3 * i + 1] = waypoints[i].y;
    out[3 * i + 2] = waypoints[i].theta;
  }
  return out;
}

PlannedTrajectory PlannedTrajectory::FromFlat(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  PlannedTrajectory t;
  const auto n = flat.size() / 3;
  t.waypoints.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.waypoints.emplace_back(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
  }
  return t;
}

double PlannedTrajectory::PathLength() const {
  double total = 0.0;
  Point2 prev(0.0, 0.0);
  for (const auto& w : waypoints) {
    total += (w.position() - prev).norm();
    prev = w.position();
  }
  return total;
}

namespace {

double DirectedHausdorff(const Polyline& from, const Polyline& to) {
  double worst = 0.0;
  for (const auto& q : from.points()) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < to.size(); ++i) {
      best = std::min(best, PointSegmentDistance(q, to[i], to[i + 1]));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double HausdorffDistance(const Polyline& a, const Polyline& b) {
  return std::max(DirectedHausdorff(a, b), DirectedHausdorff(b, a));
}

}  // namespace urbannav
