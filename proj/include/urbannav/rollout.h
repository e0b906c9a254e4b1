#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>

#include "urbannav/episode.h"
#include "urbannav/planner.h"
#include "urbannav/route.h"
#include "urbannav/scene.h"
#include "urbannav/sim.h"

namespace urbannav {

/// What a policy sees at a query. `state` and `scene` are privileged and
/// only read by scripted policies.
struct PolicyInput {
  const SimState* state = nullptr;
  const Scene* scene = nullptr;
  /// Most recent observation last.
  std::span<const Observation> history;
  const Roadbook* roadbook = nullptr;
};

class NavigationPolicy {
 public:
  virtual ~NavigationPolicy() = default;
  virtual void Reset(const Scene& /*scene*/, std::uint64_t /*seed*/) {}
  virtual PlannedTrajectory Act(const PolicyInput& input) = 0;
};

inline constexpr int kDefaultWaypoints = 8;
inline constexpr double kTrajectoryHorizon = 2.0;

/// Scripted demonstrator: follows the planner's path with pure-pursuit
/// style trajectories, yields to pedestrians, and injects lateral noise,
/// occasional detours and rare unguarded lapses proportional to
/// `noise_level`.
class ScriptedExpert : public NavigationPolicy {
 public:
  explicit ScriptedExpert(double noise_level = 0.0, int waypoints = kDefaultWaypoints);

  void Reset(const Scene& scene, std::uint64_t seed) override;
  PlannedTrajectory Act(const PolicyInput& input) override;

  const Polyline& plan() const { return *plan_; }

 private:
  double noise_level_;
  int waypoints_;
  std::optional<Polyline> plan_;
  std::shared_ptr<const OccupancyGrid> grid_;
  double plan_progress_ = 0.0;
  std::int64_t last_query_tick_ = 0;
  std::mt19937_64 rng_;
  int detour_left_ = 0;
  double detour_offset_ = 0.0;
  int lapse_left_ = 0;
  double lapse_angle_ = 0.0;
};

/// Uniformly random trajectories; a sanity baseline.
class RandomPolicy : public NavigationPolicy {
 public:
  explicit RandomPolicy(int waypoints = kDefaultWaypoints) : waypoints_(waypoints) {}
  void Reset(const Scene& scene, std::uint64_t seed) override;
  PlannedTrajectory Act(const PolicyInput& input) override;

 private:
  int waypoints_;
  std::mt19937_64 rng_;
};

struct RolloutOptions {
  SimConfig sim;
  HtlParams htl;
  /// Roadbooks come from a lifted copy of the navigation route.
  bool lift_route = false;
  int history_frames = 4;
  EpisodeSource source = EpisodeSource::kPolicy;
  std::string episode_id;
  std::string scene_ref;
  std::string created_at;
  double noise_level = 0.0;
};

/// Runs one episode to its terminal event and records every query.
EpisodeRecord Rollout(const Scene& scene, NavigationPolicy& policy, std::uint64_t seed,
                      const RolloutOptions& options);

/// Expert demonstration episode.
EpisodeRecord RunExpert(const Scene& scene, double noise_level, std::uint64_t seed,
                        RolloutOptions options = {});

/// Reward ingredients for one executed step.
RewardTerms TermsFromEvents(const std::vector<Event>& events, double progress_delta,
                            double total_route);

/// Metrics row from a finished simulation.
EpisodeResult ResultFromState(const SimState& state, const Scene& scene);

}  // namespace urbannav
