#include "urbannav/route.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <unordered_map>

#include <Eigen/Dense>

#include "urbannav/error.h"

namespace urbannav {

void HtlParams::Validate() const {
  if (sg_window % 2 == 0 || sg_window <= sg_order || sg_order < 0) {
    throw ParameterError("sg_window must be odd and larger than sg_order");
  }
  if (corner_window < 1) throw ParameterError("corner_window must be >= 1");
  if (!(corner_angle_threshold > 0.0) || !(corner_min_spacing > 0.0) ||
      !(resample_step > 0.0) || !(corner_sample_step > 0.0) ||
      !(noise_control_spacing > 0.0)) {
    throw ParameterError("HTL thresholds, spacings and steps must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be non-negative");
}

const char* ToString(TurnDirection d) {
  switch (d) {
    case TurnDirection::kLeft:
      return "left";
    case TurnDirection::kRight:
      return "right";
    case TurnDirection::kStraightToGoal:
      return "straight";
  }
  return "straight";
}

TurnDirection TurnDirectionFromString(const std::string& s) {
  if (s == "left") return TurnDirection::kLeft;
  if (s == "right") return TurnDirection::kRight;
  if (s == "straight") return TurnDirection::kStraightToGoal;
  throw ParameterError("unknown turn direction '" + s + "'");
}

const char* ToString(QualityIssue q) {
  switch (q) {
    case QualityIssue::kNone:
      return "none";
    case QualityIssue::kSelfIntersection:
      return "self-intersection";
    case QualityIssue::kTooShort:
      return "too-short";
    case QualityIssue::kTeleport:
      return "teleport";
  }
  return "none";
}

std::uint64_t HashSeed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Savitzky-Golay

Eigen::VectorXd SgCoefficients(int window, int order, int eval_offset) {
  const int half = window / 2;
  Eigen::MatrixXd vander(window, order + 1);
  for (int j = 0; j < window; ++j) {
    double v = 1.0;
    for (int p = 0; p <= order; ++p) {
      vander(j, p) = v;
      v *= static_cast<double>(j - half);
    }
  }
  Eigen::VectorXd e(order + 1);
  double v = 1.0;
  for (int p = 0; p <= order; ++p) {
    e[p] = v;
    v *= static_cast<double>(eval_offset);
  }
  // weights = A (A^T A)^{-1} e
  const Eigen::MatrixXd gram = vander.transpose() * vander;
  return vander * gram.ldlt().solve(e);
}

SmoothResult SgSmooth(const Polyline& traj, int window, int order) {
  const int n = static_cast<int>(traj.size());
  if (window % 2 == 0 || window <= order || order < 0) {
    throw ParameterError("sg window must be odd and larger than the order");
  }
  if (n < window) return {traj, true};
  const int half = window / 2;
  const Eigen::VectorXd center = SgCoefficients(window, order, 0);
  std::vector<Point2> out(n);
  for (int i = 0; i < n; ++i) {
    int start = i - half;
    Eigen::VectorXd edge;
    const Eigen::VectorXd* w = &center;
    if (i < half) {
      start = 0;
      edge = SgCoefficients(window, order, i - half);
      w = &edge;
    } else if (i >= n - half) {
      start = n - window;
      edge = SgCoefficients(window, order, i - (n - 1 - half));
      w = &edge;
    }
    Point2 acc = Point2::Zero();
    for (int j = 0; j < window; ++j) acc += (*w)[j] * traj[start + j];
    out[i] = acc;
  }
  return {Polyline(std::move(out), /*allow_degenerate=*/true), false};
}

// ---------------------------------------------------------------------------
// Quality screen

namespace {

bool AdjacentFold(const Point2& a, const Point2& b, const Point2& c) {
  return Orientation(a, b, c) == 0 && (b - a).dot(c - b) < 0.0;
}

std::vector<Point2> DropDuplicates(const std::vector<Point2>& pts) {
  std::vector<Point2> out;
  for (const auto& p : pts) {
    if (out.empty() || p != out.back()) out.push_back(p);
  }
  return out;
}

}  // namespace

bool SelfIntersects(const Polyline& traj) {
  const auto& p = traj.points();
  const std::size_t segs = p.size() - 1;
  for (std::size_t i = 0; i + 2 < p.size(); ++i) {
    if (AdjacentFold(p[i], p[i + 1], p[i + 2])) return true;
  }
  if (segs < 3) return false;

  Eigen::AlignedBox2d bounds;
  for (const auto& q : p) bounds.extend(q);
  const double extent = std::max(bounds.sizes().maxCoeff(), 1e-9);
  const double mean_seg = std::max(traj.length() / static_cast<double>(segs), 1e-9);
  const double cell = std::max({mean_seg * 2.0, extent / 512.0});
  auto key = [](long cx, long cy) {
    return (static_cast<std::uint64_t>(cx) << 32) ^ static_cast<std::uint32_t>(cy);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid;
  for (std::size_t i = 0; i < segs; ++i) {
    const Point2 lo = p[i].cwiseMin(p[i + 1]) - bounds.min();
    const Point2 hi = p[i].cwiseMax(p[i + 1]) - bounds.min();
    const long x0 = static_cast<long>(std::floor(lo.x() / cell));
    const long x1 = static_cast<long>(std::floor(hi.x() / cell));
    const long y0 = static_cast<long>(std::floor(lo.y() / cell));
    const long y1 = static_cast<long>(std::floor(hi.y() / cell));
    for (long cx = x0; cx <= x1; ++cx) {
      for (long cy = y0; cy <= y1; ++cy) {
        auto& bucket = grid[key(cx, cy)];
        for (std::size_t j : bucket) {
          if (i - j >= 2 && SegmentsIntersect(p[j], p[j + 1], p[i], p[i + 1])) return true;
        }
        bucket.push_back(i);
      }
    }
  }
  return false;
}

QualityVerdict RejectLowQuality(const Polyline& traj) {
  const auto pts = DropDuplicates(traj.points());
  if (pts.size() < 2) return {QualityIssue::kTooShort};
  const Polyline clean(pts, /*allow_degenerate=*/true);
  if (SelfIntersects(clean)) return {QualityIssue::kSelfIntersection};
  if (clean.length() < kMinTrajectoryLength) return {QualityIssue::kTooShort};
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if ((pts[i + 1] - pts[i]).norm() > kMaxPointGap) return {QualityIssue::kTeleport};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Corners

double TurningAngle(const Polyline& p, std::size_t i, int k) {
  const Point2 v1 = p[i] - p[i - k];
  const Point2 v2 = p[i + k] - p[i];
  if (v1.squaredNorm() == 0.0 || v2.squaredNorm() == 0.0) return 0.0;
  return std::atan2(std::abs(Cross(v1, v2)), v1.dot(v2));
}

std::vector<std::size_t> DetectCorners(const Polyline& p, const HtlParams& params) {
  const int k = params.corner_window;
  const std::size_t n = p.size();
  if (n < static_cast<std::size_t>(2 * k + 1)) return {};

  std::vector<std::size_t> merged;
  std::size_t run_start = 0;
  bool in_run = false;
  for (std::size_t i = k; i + k < n; ++i) {
    const bool candidate = TurningAngle(p, i, k) > params.corner_angle_threshold;
    if (candidate && !in_run) {
      run_start = i;
      in_run = true;
    } else if (!candidate && in_run) {
      merged.push_back(run_start + (i - 1 - run_start) / 2);
      in_run = false;
    }
  }
  if (in_run) merged.push_back(run_start + (n - k - 1 - run_start) / 2);

  std::vector<std::size_t> kept;
  for (std::size_t c : merged) {
    if (kept.empty() || p.cumulative(c) - p.cumulative(kept.back()) >= params.corner_min_spacing) {
      kept.push_back(c);
    }
  }
  return kept;
}

std::vector<Polyline> SplitAt(const Polyline& p, const std::vector<std::size_t>& indices) {
  std::vector<Polyline> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    std::vector<Point2> pts(p.points().begin() + start, p.points().begin() + end + 1);
    out.emplace_back(std::move(pts), /*allow_degenerate=*/true);
    start = end;
  };
  for (std::size_t idx : indices) {
    if (idx > start && idx + 1 < p.size()) emit(idx);
  }
  emit(p.size() - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation

std::vector<Polyline> PerturbSegments(const std::vector<Polyline>& segments, double sigma,
                                      std::uint64_t rng_seed, double control_spacing) {
  if (!(sigma >= 0.0)) throw ParameterError("sigma must be non-negative");
  std::vector<Polyline> out;
  out.reserve(segments.size());
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const Polyline& seg = segments[si];
    if (sigma == 0.0) {
      out.push_back(seg);
      continue;
    }
    std::mt19937_64 rng(HashSeed(rng_seed, si));
    std::normal_distribution<double> noise(0.0, sigma);
    const double length = seg.length();
    const int intervals = std::max(1, static_cast<int>(std::ceil(length / control_spacing - 1e-9)));
    const double h = length / intervals;
    std::vector<double> ctrl(intervals + 1, 0.0);
    for (int j = 1; j < intervals; ++j) ctrl[j] = noise(rng);

    std::vector<Point2> pts = seg.points();
    const std::size_t n = pts.size();
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double s = seg.cumulative(i);
      if (h <= 0.0) break;
      const int j = std::min(static_cast<int>(s / h), intervals - 1);
      const double t = std::clamp((s - j * h) / h, 0.0, 1.0);
      const double w = 0.5 * (1.0 - std::cos(M_PI * t));
      const double offset = ctrl[j] * (1.0 - w) + ctrl[j + 1] * w;
      Point2 tangent = Point2::Zero();
      const Point2 d0 = seg[i] - seg[i - 1];
      const Point2 d1 = seg[i + 1] - seg[i];
      if (d0.norm() > 0.0) tangent += d0.normalized();
      if (d1.norm() > 0.0) tangent += d1.normalized();
      if (tangent.norm() <= 1e-12) continue;
      tangent.normalize();
      pts[i] = seg[i] + offset * Point2(-tangent.y(), tangent.x());
    }
    out.emplace_back(std::move(pts), /*allow_degenerate=*/true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lifting

Polyline Lift(const Polyline& raw, const HtlParams& params, std::uint64_t rng_seed,
              const LiftOptions& options) {
  params.Validate();
  Polyline traj = raw;
  if (!options.skip_smoothing) {
    traj = SgSmooth(raw, params.sg_window, params.sg_order).trajectory;
  }
  const QualityVerdict verdict = RejectLowQuality(traj);
  if (!verdict.accepted()) throw LiftRejected(ToString(verdict.issue));

  const Polyline dense = Resample(traj, params.corner_sample_step);
  const auto corners = DetectCorners(dense, params);
  const auto segments = SplitAt(dense, corners);
  const auto noisy =
      PerturbSegments(segments, params.noise_sigma, rng_seed, params.noise_control_spacing);

  std::vector<Point2> merged = noisy.front().points();
  for (std::size_t i = 1; i < noisy.size(); ++i) {
    merged.insert(merged.end(), noisy[i].points().begin() + 1, noisy[i].points().end());
  }
  return ResampleChord(Polyline(std::move(merged), true), params.resample_step);
}

// ---------------------------------------------------------------------------
// Roadbook

std::vector<RouteCorner> FindRouteCorners(const Polyline& route, const HtlParams& params) {
  const double step = params.corner_sample_step;
  const Polyline dense = Resample(route, step);
  const int k = params.corner_window;
  std::vector<RouteCorner> out;
  for (std::size_t idx : DetectCorners(dense, params)) {
    const Point2 v1 = dense[idx] - dense[idx - k];
    const Point2 v2 = dense[idx + k] - dense[idx];
    RouteCorner c;
    c.arc_position = std::min(static_cast<double>(idx) * step, route.length());
    c.direction = Cross(v1, v2) > 0.0 ? TurnDirection::kLeft : TurnDirection::kRight;
    out.push_back(c);
  }
  return out;
}

RoadbookEncoder::RoadbookEncoder(Polyline route, const HtlParams& params)
    : route_(std::move(route)), corners_(FindRouteCorners(route_, params)) {}

Roadbook RoadbookEncoder::Encode(const Pose2& agent, double route_progress) const {
  const double total = route_.length();
  const double tol = 1e-9 * std::max(1.0, total);
  if (!(route_progress >= -tol && route_progress <= total + tol)) {
    throw ParameterError("route progress outside [0, route length]");
  }
  route_progress = std::clamp(route_progress, 0.0, total);

  Roadbook rb;
  const double end = std::min(route_progress + kRoadbookHorizon, total);
  if (end - route_progress > 1e-9) {
    const Polyline ahead = Resample(route_.Slice(route_progress, end), kRoadbookSpacing);
    for (std::size_t i = 1; i < ahead.size() && rb.waypoints.size() < kRoadbookMaxWaypoints; ++i) {
      rb.waypoints.push_back(ToEgocentric(ahead[i], agent));
    }
  }
  rb.turn_cue = {TurnDirection::kStraightToGoal, total - route_progress};
  for (const auto& c : corners_) {
    if (c.arc_position > route_progress + 1e-9) {
      rb.turn_cue = {c.direction, c.arc_position - route_progress};
      break;
    }
  }
  return rb;
}

Roadbook EncodeRoadbook(const Polyline& route, const Pose2& agent, double route_progress,
                        const HtlParams& params) {
  return RoadbookEncoder(route, params).Encode(agent, route_progress);
}

namespace {

std::string Fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  std::string s(buf);
  if (s == "-0.0") s = "0.0";
  return s;
}

}  // namespace

std::string RenderPrompt(const Roadbook& rb) {
  std::string out = "Follow the route through waypoints: ";
  for (std::size_t i = 0; i < rb.waypoints.size(); ++i) {
    if (i > 0) out += ", ";
    out += "(" + Fixed1(rb.waypoints[i].x()) + "," + Fixed1(rb.waypoints[i].y()) + ")";
  }
  out += "; then ";
  if (rb.turn_cue.direction == TurnDirection::kStraightToGoal) {
    out += "continue straight to the goal";
  } else {
    out += std::string("turn ") + ToString(rb.turn_cue.direction);
  }
  out += " in " + Fixed1(rb.turn_cue.distance) + " meters.";
  return out;
}

}  // namespace urbannav
