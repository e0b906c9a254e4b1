#include "urbannav/replay.h"

#include "urbannav/rollout.h"

namespace urbannav {

namespace {

ReplayReport Diverged(std::int64_t tick, std::string detail) {
  return {false, tick, std::move(detail)};
}

}  // namespace

ReplayReport Replay(const Scene& scene, const EpisodeRecord& episode, const SimConfig& config) {
  SimState state = InitialState(scene, config);
  const auto& steps = episode.steps;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const EpisodeStep& st = steps[i];
    // A mismatch at the start of step i is caused by what step i-1 executed.
    const std::int64_t blame = i == 0 ? st.tick : steps[i - 1].tick;
    if (state.terminal) return Diverged(blame, "step recorded after the episode ended");
    if (st.tick != state.tick) return Diverged(blame, "tick mismatch");
    if (!(st.pose == state.agent) || st.speed != state.agent_speed) {
      return Diverged(blame, "pose mismatch");
    }
    if (!(Observe(state, scene, config) == st.observation)) {
      return Diverged(st.tick, "observation mismatch");
    }
    std::vector<Event> events;
    if (st.control) {
      events = Step(state, scene, *st.control, config);
    } else {
      if (st.action.size() == 0) return Diverged(st.tick, "step has neither action nor control");
      ExecutionResult res =
          ExecuteTrajectory(state, scene, PlannedTrajectory::FromFlat(st.action), config);
      if (res.ticks == 0 && !state.terminal) {
        auto ev = Step(state, scene, Control{}, config);
        res.events.insert(res.events.end(), ev.begin(), ev.end());
      }
      events = std::move(res.events);
    }
    if (events != st.events) return Diverged(st.tick, "event mismatch");
  }
  const std::int64_t last = steps.empty() ? 0 : steps.back().tick;
  const auto& f = episode.footer;
  if (!(f.final_pose == state.agent)) return Diverged(last, "final pose mismatch");
  if (state.terminal) {
    if (f.terminal != *state.terminal) return Diverged(last, "terminal mismatch");
  } else if (f.terminal != EventKind::kAborted) {
    return Diverged(last, "episode ended without a terminal event");
  }
  const EpisodeResult expected = ResultFromState(state, scene);
  if (!(expected == f.metrics)) return Diverged(last, "footer metrics mismatch");
  return {};
}

}  // namespace urbannav
