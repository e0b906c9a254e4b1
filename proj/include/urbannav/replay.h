#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "urbannav/episode.h"
#include "urbannav/scene.h"
#include "urbannav/sim.h"

namespace urbannav {

struct ReplayReport {
  bool ok = true;
  // Tick of the first recorded step whose re-simulation disagrees.
  std::optional<std::int64_t> divergence_tick;
  std::string detail;
};

/// Re-simulates a recorded episode from its scene: teleop steps apply their
/// recorded control for one tick, other steps re-execute their action.
/// Checks tick, pose, speed, observation and events of every step, then the
/// footer.
ReplayReport Replay(const Scene& scene, const EpisodeRecord& episode, const SimConfig& config = {});

}  // namespace urbannav
