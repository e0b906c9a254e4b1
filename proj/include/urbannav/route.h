#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "urbannav/geom.h"

namespace urbannav {

/// Tunables of heuristic trajectory lifting.
struct HtlParams {
  int sg_window = 9;
  int sg_order = 3;
  int corner_window = 5;
  double corner_angle_threshold = 0.4363;  // 25 degrees
  double corner_min_spacing = 5.0;
  double noise_sigma = 0.5;
  double noise_control_spacing = 10.0;
  double resample_step = 2.0;
  // Corner detection runs on a copy resampled at this spacing so that the
  // index window corresponds to a fixed arc length.
  double corner_sample_step = 0.5;

  /// Throws ParameterError if any invariant is violated.
  void Validate() const;
};

enum class TurnDirection { kLeft, kRight, kStraightToGoal };

const char* ToString(TurnDirection d);
TurnDirection TurnDirectionFromString(const std::string& s);

struct TurnCue {
  TurnDirection direction = TurnDirection::kStraightToGoal;
  double distance = 0.0;

  bool operator==(const TurnCue&) const = default;
};

/// Near-field route conditioning: egocentric waypoints plus next-turn cue.
struct Roadbook {
  std::vector<Point2> waypoints;
  TurnCue turn_cue;

  bool operator==(const Roadbook&) const = default;
};

inline constexpr double kRoadbookHorizon = 40.0;
inline constexpr double kRoadbookSpacing = 2.0;
inline constexpr int kRoadbookMaxWaypoints = 20;

struct SmoothResult {
  Polyline trajectory;
  bool too_short = false;  // input was returned unchanged
};

/// Savitzky-Golay smoothing of each coordinate channel. Edge samples are
/// taken from the polynomial fitted to the first/last full window.
SmoothResult SgSmooth(const Polyline& traj, int window, int order);

/// Least-squares filter weights for the sample at offset `eval_offset`
/// from the window center.
Eigen::VectorXd SgCoefficients(int window, int order, int eval_offset = 0);

enum class QualityIssue { kNone, kSelfIntersection, kTooShort, kTeleport };

const char* ToString(QualityIssue q);

struct QualityVerdict {
  QualityIssue issue = QualityIssue::kNone;
  bool accepted() const { return issue == QualityIssue::kNone; }
};

inline constexpr double kMinTrajectoryLength = 5.0;
inline constexpr double kMaxPointGap = 5.0;

QualityVerdict RejectLowQuality(const Polyline& traj);

/// True if any two non-adjacent segments intersect, or two adjacent
/// segments fold back over each other. Uses a uniform grid over segment
/// bounding boxes.
bool SelfIntersects(const Polyline& traj);

/// Turning angle at interior index i using neighbours i-k and i+k.
double TurningAngle(const Polyline& p, std::size_t i, int k);

/// Window-based corner indices: thresholded candidates, runs merged to their
/// middle index, then greedy minimum arc-length spacing.
std::vector<std::size_t> DetectCorners(const Polyline& p, const HtlParams& params);

/// Smooth lateral Gaussian offsets with pinned segment endpoints.
std::vector<Polyline> PerturbSegments(const std::vector<Polyline>& segments, double sigma,
                                      std::uint64_t rng_seed, double control_spacing = 10.0);

struct LiftOptions {
  // Simulator trajectories are already clean and skip smoothing.
  bool skip_smoothing = false;
};

/// Heuristic trajectory lifting: raw path -> abstracted, perturbed route.
/// Throws LiftRejected when the trajectory fails the quality screen.
Polyline Lift(const Polyline& raw, const HtlParams& params, std::uint64_t rng_seed,
              const LiftOptions& options = {});

/// Splits `p` at the given vertex indices.
std::vector<Polyline> SplitAt(const Polyline& p, const std::vector<std::size_t>& indices);

/// A detected corner of a route: arc position and turn direction.
struct RouteCorner {
  double arc_position = 0.0;
  TurnDirection direction = TurnDirection::kLeft;
};

/// Precomputes corners of a route so roadbooks can be encoded per step.
class RoadbookEncoder {
 public:
  explicit RoadbookEncoder(Polyline route, const HtlParams& params = {});

  /// Throws ParameterError if progress is outside [0, route length].
  Roadbook Encode(const Pose2& agent, double route_progress) const;

  const Polyline& route() const { return route_; }
  const std::vector<RouteCorner>& corners() const { return corners_; }

 private:
  Polyline route_;
  std::vector<RouteCorner> corners_;
};

std::vector<RouteCorner> FindRouteCorners(const Polyline& route, const HtlParams& params);

Roadbook EncodeRoadbook(const Polyline& route, const Pose2& agent, double route_progress,
                        const HtlParams& params = {});

/// Instruction text for a roadbook, coordinates at 0.1 m.
std::string RenderPrompt(const Roadbook& rb);

/// Mixes two values into a seed.
std::uint64_t HashSeed(std::uint64_t a, std::uint64_t b);

}  // namespace urbannav
