#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "urbannav/geom.h"
#include "urbannav/route.h"
#include "urbannav/sim.h"

namespace urbannav {

enum class EpisodeSource { kExpert, kTeleop, kPolicy };

const char* ToString(EpisodeSource s);
EpisodeSource EpisodeSourceFromString(const std::string& s);

/// Per-step reward ingredients: completion increment (fraction of the
/// route) and collision / deviation indicators.
struct RewardTerms {
  double completion = 0.0;
  int collision = 0;
  int deviation = 0;
  bool operator==(const RewardTerms&) const = default;
};

/// Per-episode outcome used by the metrics.
struct EpisodeResult {
  bool success = false;
  double agent_path_length = 0.0;
  double shortest_path_length = 0.0;
  int collision_steps = 0;
  int social_violation_steps = 0;
  double completed_route = 0.0;
  double total_route = 0.0;
  EventKind terminal = EventKind::kTimeout;
  bool operator==(const EpisodeResult&) const = default;
};

struct EpisodeHeader {
  std::string episode_id;
  std::string scene_ref;
  EpisodeSource source = EpisodeSource::kExpert;
  std::uint64_t seed = 0;
  std::string created_at;
  double noise_level = 0.0;
  bool operator==(const EpisodeHeader&) const = default;
};

/// One record per policy query (expert/policy) or per tick (teleop).
struct EpisodeStep {
  std::int64_t tick = 0;
  Pose2 pose;
  double speed = 0.0;
  Observation observation;
  Roadbook roadbook;
  Eigen::VectorXd action;  // 3N flattened egocentric trajectory
  RewardTerms reward_terms;
  std::vector<Event> events;
  std::optional<Control> control;  // teleop ticks only
  bool operator==(const EpisodeStep& o) const {
    return tick == o.tick && pose == o.pose && speed == o.speed &&
           observation == o.observation && roadbook == o.roadbook &&
           action.size() == o.action.size() && action == o.action &&
           reward_terms == o.reward_terms && events == o.events && control == o.control;
  }
};

struct EpisodeFooter {
  EventKind terminal = EventKind::kTimeout;
  bool partial = false;
  Pose2 final_pose;
  EpisodeResult metrics;
  bool operator==(const EpisodeFooter&) const = default;
};

struct EpisodeRecord {
  EpisodeHeader header;
  std::vector<EpisodeStep> steps;
  EpisodeFooter footer;
  bool operator==(const EpisodeRecord&) const = default;
};

/// Executed path of the agent: step poses followed by the final pose.
std::vector<Point2> EpisodePath(const EpisodeRecord& episode);

}  // namespace urbannav
