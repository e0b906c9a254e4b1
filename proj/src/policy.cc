#include "urbannav/policy.h"

#include <algorithm>
#include <cmath>

#include "urbannav/iql.h"

namespace urbannav {

double Reward(const RewardTerms& terms, const RewardWeights& w) {
  if (!(terms.completion >= 0.0 && terms.completion <= 1.0)) {
    throw ParameterError("completion increment outside [0, 1]");
  }
  if ((terms.collision != 0 && terms.collision != 1) ||
      (terms.deviation != 0 && terms.deviation != 1)) {
    throw ParameterError("reward indicators must be 0 or 1");
  }
  return w.completion * terms.completion - w.collision * terms.collision -
         w.deviation * terms.deviation;
}

Eigen::Matrix<float, kPooledRays, 1> PoolObservation(const Observation& obs, double max_range) {
  Eigen::Matrix<float, kPooledRays, 1> out;
  for (int i = 0; i < kPooledRays; ++i) {
    const double d = std::min(obs.depths[2 * i], obs.depths[2 * i + 1]);
    out[i] = static_cast<float>(std::clamp(d / max_range, 0.0, 1.0));
  }
  return out;
}

Eigen::Matrix<float, kRayFeatures, 1> EncodeFrames(std::span<const Observation> history,
                                                   double max_range) {
  if (history.empty()) throw ParameterError("feature encoding needs at least one frame");
  Eigen::Matrix<float, kRayFeatures, 1> out;
  const int n = static_cast<int>(history.size());
  for (int f = 0; f < kFrameStack; ++f) {
    // Slot f holds frame n - kFrameStack + f, clamped to the oldest one.
    const int src = std::max(0, n - kFrameStack + f);
    out.segment<kPooledRays>(f * kPooledRays) = PoolObservation(history[src], max_range);
  }
  return out;
}

Eigen::Matrix<float, kFeatureDim - kRayFeatures, 1> EncodeRouteAndSpeed(const Roadbook& rb,
                                                                        double speed,
                                                                        double max_speed) {
  Eigen::Matrix<float, kFeatureDim - kRayFeatures, 1> out;
  out.setZero();
  const int count = std::min<int>(kRoadbookMaxWaypoints, static_cast<int>(rb.waypoints.size()));
  for (int i = 0; i < count; ++i) {
    out[2 * i] = static_cast<float>(rb.waypoints[i].x() / kRoadbookHorizon);
    out[2 * i + 1] = static_cast<float>(rb.waypoints[i].y() / kRoadbookHorizon);
  }
  const int cue = kRoadbookFeatures;
  out[cue + static_cast<int>(rb.turn_cue.direction)] = 1.0f;
  out[cue + 3] = static_cast<float>(rb.turn_cue.distance / kRoadbookHorizon);
  out[cue + kCueFeatures] = static_cast<float>(speed / max_speed);
  return out;
}

FeatureVector EncodeFeatures(std::span<const Observation> history, const Roadbook& rb,
                             double speed) {
  FeatureVector f;
  f << EncodeFrames(history), EncodeRouteAndSpeed(rb, speed);
  return f;
}

PlannedTrajectory DecodeAction(const Eigen::Ref<const Eigen::VectorXf>& output) {
  if (output.size() % 3 != 0) throw ParameterError("action size must be a multiple of 3");
  PlannedTrajectory traj;
  Point2 prev = Point2::Zero();
  for (Eigen::Index i = 0; i + 2 < output.size(); i += 3) {
    Point2 p(std::clamp<double>(output[i], -kActionMaxCoordinate, kActionMaxCoordinate),
             std::clamp<double>(output[i + 1], -kActionMaxCoordinate, kActionMaxCoordinate));
    const Point2 d = p - prev;
    if (d.norm() > kActionMaxSpacing) p = prev + d * (kActionMaxSpacing / d.norm());
    double theta = output[i + 2];
    if (!std::isfinite(theta)) theta = 0.0;
    if (!std::isfinite(p.x()) || !std::isfinite(p.y())) p = prev;
    traj.waypoints.emplace_back(p.x(), p.y(), theta);
    prev = p;
  }
  return traj;
}

PlannedTrajectory ResampleTrajectory(const PlannedTrajectory& trajectory, int n, double horizon) {
  if (n < 1) throw ParameterError("need at least one waypoint");
  std::vector<Point2> pts{Point2::Zero()};
  for (const auto& w : trajectory.waypoints) pts.push_back(w.position());
  const Polyline path(std::move(pts), /*allow_degenerate=*/true);
  const double h = std::min(horizon, path.length());
  PlannedTrajectory out;
  Point2 prev = Point2::Zero();
  double heading = 0.0;
  for (int i = 1; i <= n; ++i) {
    const Point2 p = path.PointAt(h * i / n);
    if ((p - prev).norm() > 1e-9) {
      heading = std::atan2(p.y() - prev.y(), p.x() - prev.x());
    } else if (i == 1 && !trajectory.waypoints.empty()) {
      heading = trajectory.waypoints.front().theta;
    }
    out.waypoints.emplace_back(p.x(), p.y(), heading);
    prev = p;
  }
  return out;
}

Mlp<float> MakePolicyNet(std::uint64_t seed) {
  Mlp<float> net({kFeatureDim, kPolicyHidden, kPolicyHidden, kPolicyHidden, kPolicyHidden,
                  kActionDim});
  net.Init(seed);
  return net;
}

PlannedTrajectory LearnedPolicy::Act(const PolicyInput& input) {
  const FeatureVector f = EncodeFeatures(input.history, *input.roadbook, input.state->agent_speed);
  const Eigen::VectorXf out = net_.Forward(Eigen::MatrixXf(f));
  return DecodeAction(out);
}

}  // namespace urbannav
