#pragma once

#include <cstdint>
#include <span>

#include <Eigen/Core>

#include "urbannav/nn.h"
#include "urbannav/rollout.h"

namespace urbannav {

inline constexpr int kFrameStack = 4;
inline constexpr int kPooledRays = kRayCount / 2;
inline constexpr int kRayFeatures = kFrameStack * kPooledRays;              // 256
inline constexpr int kRoadbookFeatures = 2 * kRoadbookMaxWaypoints;         // 40
inline constexpr int kCueFeatures = 4;
inline constexpr int kFeatureDim = kRayFeatures + kRoadbookFeatures + kCueFeatures + 1;  // 301
inline constexpr int kActionDim = 3 * kDefaultWaypoints;
inline constexpr int kPolicyHidden = 512;
inline constexpr int kPolicyTapLayer = 2;

inline constexpr double kActionMaxCoordinate = 5.0;
inline constexpr double kActionMaxSpacing = 0.5;

using FeatureVector = Eigen::Matrix<float, kFeatureDim, 1>;

/// Pairwise min-pooled ray depths of one frame, scaled to [0, 1].
Eigen::Matrix<float, kPooledRays, 1> PoolObservation(const Observation& obs,
                                                     double max_range = 15.0);

/// Ray block of the feature vector from up to k frames, oldest first. Short
/// histories are padded by repeating the oldest frame.
Eigen::Matrix<float, kRayFeatures, 1> EncodeFrames(std::span<const Observation> history,
                                                   double max_range = 15.0);

/// Roadbook and speed block (everything after the rays).
Eigen::Matrix<float, kFeatureDim - kRayFeatures, 1> EncodeRouteAndSpeed(const Roadbook& rb,
                                                                        double speed,
                                                                        double max_speed = 2.0);

FeatureVector EncodeFeatures(std::span<const Observation> history, const Roadbook& rb,
                             double speed);

/// Network output to trajectory, enforcing the coordinate and spacing clamps.
PlannedTrajectory DecodeAction(const Eigen::Ref<const Eigen::VectorXf>& output);

/// Training target: `trajectory` re-sampled to `n` waypoints at equal arc
/// spacing over its first `horizon` meters (or its full length if shorter).
PlannedTrajectory ResampleTrajectory(const PlannedTrajectory& trajectory, int n,
                                     double horizon = kTrajectoryHorizon);

Mlp<float> MakePolicyNet(std::uint64_t seed);

/// Network-driven policy used at evaluation time.
class LearnedPolicy : public NavigationPolicy {
 public:
  explicit LearnedPolicy(Mlp<float> net) : net_(std::move(net)) {}
  PlannedTrajectory Act(const PolicyInput& input) override;
  const Mlp<float>& net() const { return net_; }

 private:
  Mlp<float> net_;
};

}  // namespace urbannav
