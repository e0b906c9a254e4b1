#include "urbannav/rollout.h"

#include <algorithm>
#include <cmath>

#include "urbannav/error.h"

namespace urbannav {

namespace {

// Plan arc covered by one expert trajectory.
constexpr double kExpertReach = kTrajectoryHorizon;
constexpr double kPedestrianLateralMargin = 1.1;
constexpr double kDetourProbability = 0.25;
constexpr double kNoiseClearance = 0.7;
constexpr double kNoiseFloorClearance = 0.0;
constexpr double kPedestrianClearance = 0.9;
constexpr double kMaxQueryTravel = 1.5;
// Per-query chance (times the noise level) of heading off the plan without
// checking clearance.
constexpr double kLapseRate = 0.02;

}  // namespace

// ---------------------------------------------------------------------------
// Scripted expert

ScriptedExpert::ScriptedExpert(double noise_level, int waypoints)
    : noise_level_(noise_level), waypoints_(waypoints) {
  if (noise_level < 0.0) throw ParameterError("noise level must be non-negative");
  if (waypoints < 1) throw ParameterError("need at least one waypoint");
}

void ScriptedExpert::Reset(const Scene& scene, std::uint64_t seed) {
  plan_ = PlanPath(scene);
  grid_ = std::make_shared<OccupancyGrid>(scene, PlannerConfig{}.resolution);
  plan_progress_ = 0.0;
  last_query_tick_ = 0;
  rng_.seed(HashSeed(seed, 0xe4be27));
  detour_left_ = 0;
  detour_offset_ = 0.0;
  lapse_left_ = 0;
  lapse_angle_ = 0.0;
}

PlannedTrajectory ScriptedExpert::Act(const PolicyInput& input) {
  if (!plan_) throw Error("ScriptedExpert::Act before Reset");
  const Polyline& plan = *plan_;
  const Pose2& agent = input.state->agent;
  const Point2 pos = agent.position();
  plan_progress_ = std::max(
      plan_progress_,
      ProjectOnto(plan, pos, plan_progress_ - 1.0, plan_progress_ + 5.0).arc_position);
  const double s0 = plan_progress_;

  // After bumping into something, back away toward open space first.
  bool bumped = false;
  for (auto it = input.state->event_log.rbegin();
       it != input.state->event_log.rend() && it->tick > last_query_tick_; ++it) {
    bumped = bumped || it->kind == EventKind::kCollision;
  }
  last_query_tick_ = input.state->tick;
  if (bumped) {
    double best = -1.0;
    Point2 escape = Point2::Zero();
    for (int k = 0; k < 16; ++k) {
      const double a = 2.0 * M_PI * k / 16;
      const Point2 dir(std::cos(a), std::sin(a));
      double c = grid_->ClearanceAt(pos + 0.75 * dir);
      for (const auto& ped : input.state->pedestrians) {
        c = std::min(c, (ped.position - (pos + 0.75 * dir)).norm() - 0.6);
      }
      if (c > best + 1e-9) {
        best = c;
        escape = dir;
      }
    }
    PlannedTrajectory traj;
    const Point2 local = ToEgocentric(Point2(pos + escape), agent);
    const double heading = std::atan2(local.y(), local.x());
    for (int i = 1; i <= waypoints_; ++i) {
      const Point2 p = local * (0.75 * i / waypoints_);
      traj.waypoints.emplace_back(p.x(), p.y(), heading);
    }
    return traj;
  }

  // Yield to pedestrians whose short-term motion crosses the plan ahead.
  double factor = 1.0;
  for (const auto& ped : input.state->pedestrians) {
    const Point2 rel = ToEgocentric(ped.position, agent);
    if (rel.norm() < 1.3 && rel.x() > -0.2) factor = 0.0;
    for (double t = 0.0; t <= 1.5 + 1e-9; t += 0.25) {
      const Point2 q = ped.position + t * ped.velocity;
      const Projection pr = ProjectOnto(plan, q, s0, s0 + 4.0);
      if (pr.lateral_offset >= kPedestrianLateralMargin) continue;
      const double ahead = pr.arc_position - s0;
      factor = std::min(factor, std::clamp((ahead - 1.0) / 2.5, 0.0, 1.0));
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (noise_level_ > 0.0) {
    if (detour_left_ > 0) {
      --detour_left_;
    } else {
      detour_offset_ = 0.0;
      if (unit(rng_) < kDetourProbability * noise_level_) {
        detour_left_ = 2 + static_cast<int>(unit(rng_) * 4.0);
        const double sign = unit(rng_) < 0.5 ? -1.0 : 1.0;
        detour_offset_ = sign * noise_level_ * (2.0 + 4.0 * unit(rng_));
      }
    }
  }

  if (noise_level_ > 0.0 && lapse_left_ == 0 && unit(rng_) < kLapseRate * noise_level_) {
    lapse_left_ = 1 + static_cast<int>(unit(rng_) * 3.0 * noise_level_);
    const double sign = unit(rng_) < 0.5 ? -1.0 : 1.0;
    lapse_angle_ = sign * (M_PI / 4.0 + unit(rng_) * M_PI / 4.0);
  }
  if (lapse_left_ > 0) {
    --lapse_left_;
    const Point2 t = plan.TangentAt(s0);
    const double heading = std::atan2(t.y(), t.x()) + lapse_angle_ - agent.theta;
    const Point2 dir(std::cos(heading), std::sin(heading));
    const double reach = kExpertReach * factor;
    PlannedTrajectory traj;
    for (int i = 1; i <= waypoints_; ++i) {
      const Point2 p = dir * (reach * i / waypoints_);
      traj.waypoints.emplace_back(p.x(), p.y(), NormalizeAngle(heading));
    }
    return traj;
  }

  const Point2 anchor = plan.PointAt(s0);
  const Point2 offset = pos - anchor;
  std::vector<double> lateral(waypoints_, 0.0);
  if (noise_level_ > 0.0) {
    for (int i = 0; i < waypoints_; ++i) {
      const double frac = static_cast<double>(i + 1) / waypoints_;
      lateral[i] = frac * (noise_level_ * gauss(rng_) + detour_offset_);
    }
  }
  const double clearance = std::max(kNoiseFloorClearance, kNoiseClearance - noise_level_);
  auto build = [&](double reach) {
    std::vector<Point2> world;
    world.reserve(waypoints_);
    for (int i = 0; i < waypoints_; ++i) {
      const double frac = static_cast<double>(i + 1) / waypoints_;
      const double s = s0 + reach * frac;
      Point2 p = plan.PointAt(s) + (1.0 - frac) * offset;
      if (reach > 0.0 && lateral[i] != 0.0) {
        // Noise keeps waypoints off obstacles; the margin shrinks as the
        // noise grows so that sloppy demonstrations do make contact.
        const Point2 t = plan.TangentAt(std::min(s, plan.length()));
        const Point2 n(-t.y(), t.x());
        double shift = lateral[i];
        while (std::abs(shift) > 0.05 && grid_->ClearanceAt(p + n * shift) < clearance) {
          shift *= 0.5;
        }
        if (grid_->ClearanceAt(p + n * shift) >= clearance) p += n * shift;
      }
      world.push_back(p);
    }
    return world;
  };
  // Shrink the trajectory until the agent, moving along it at the nominal
  // speed, keeps its distance from every forecast pedestrian.
  auto safe = [&](const std::vector<Point2>& world, double reach) {
    std::vector<Point2> pts{pos};
    pts.insert(pts.end(), world.begin(), world.end());
    const Polyline path(pts, true);
    const double speed = reach / kTrajectoryHorizon;
    for (const auto& ped : input.state->pedestrians) {
      for (double t = 0.0; t <= 2.0 + 1e-9; t += 0.1) {
        const Point2 a = path.PointAt(std::min(speed * t, kMaxQueryTravel));
        // Pedestrians may stop or turn around mid-query.
        if ((ped.position + t * ped.velocity - a).norm() < kPedestrianClearance) return false;
        if ((ped.position - a).norm() < 0.7) return false;
        if ((ped.position - t * ped.velocity - a).norm() < 0.65) return false;
      }
    }
    return true;
  };
  double reach = kExpertReach * factor;
  std::vector<Point2> world = build(reach);
  for (int tries = 0; reach > 0.0 && !safe(world, reach); ++tries) {
    reach = tries < 4 ? 0.5 * reach : 0.0;
    world = build(reach);
  }
  PlannedTrajectory traj;
  Point2 prev = Point2::Zero();
  double heading = 0.0;
  for (const Point2& w : world) {
    const Point2 local = ToEgocentric(w, agent);
    if ((local - prev).norm() > 1e-6) heading = std::atan2(local.y() - prev.y(), local.x() - prev.x());
    traj.waypoints.emplace_back(local.x(), local.y(), heading);
    prev = local;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Random baseline

void RandomPolicy::Reset(const Scene&, std::uint64_t seed) { rng_.seed(HashSeed(seed, 0x7a4d)); }

PlannedTrajectory RandomPolicy::Act(const PolicyInput&) {
  std::uniform_real_distribution<double> heading(-M_PI / 2.0, M_PI / 2.0);
  std::uniform_real_distribution<double> step(0.0, 0.5);
  PlannedTrajectory traj;
  Point2 p = Point2::Zero();
  double th = 0.0;
  for (int i = 0; i < waypoints_; ++i) {
    th = NormalizeAngle(th + 0.25 * heading(rng_));
    p += step(rng_) * Point2(std::cos(th), std::sin(th));
    traj.waypoints.emplace_back(p.x(), p.y(), th);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Episodes

RewardTerms TermsFromEvents(const std::vector<Event>& events, double progress_delta,
                            double total_route) {
  RewardTerms terms;
  terms.completion = total_route > 0.0 ? progress_delta / total_route : 0.0;
  for (const auto& e : events) {
    if (e.kind == EventKind::kCollision) terms.collision = 1;
    if (e.kind == EventKind::kDeviation) terms.deviation = 1;
  }
  return terms;
}

EpisodeResult ResultFromState(const SimState& state, const Scene& scene) {
  EpisodeResult r;
  r.terminal = state.terminal.value_or(EventKind::kAborted);
  r.success = r.terminal == EventKind::kSuccess;
  r.agent_path_length = state.path_length;
  try {
    r.shortest_path_length = ShortestPathLength(scene);
  } catch (const InfeasibleScene&) {
    r.shortest_path_length = scene.gt_route.length();
  }
  for (const auto& e : state.event_log) {
    if (e.kind == EventKind::kCollision) ++r.collision_steps;
    if (e.kind == EventKind::kNearMiss) ++r.social_violation_steps;
  }
  r.total_route = scene.gt_route.length();
  r.completed_route = r.success ? r.total_route : std::min(state.route_progress, r.total_route);
  return r;
}

EpisodeRecord Rollout(const Scene& scene, NavigationPolicy& policy, std::uint64_t seed,
                      const RolloutOptions& options) {
  EpisodeRecord rec;
  rec.header.episode_id = options.episode_id;
  rec.header.scene_ref = options.scene_ref;
  rec.header.source = options.source;
  rec.header.seed = seed;
  rec.header.created_at = options.created_at;
  rec.header.noise_level = options.noise_level;

  Polyline route = scene.NavigationRoute();
  if (options.lift_route) {
    try {
      route = Lift(route, options.htl, HashSeed(seed, 0x1f7), {.skip_smoothing = true});
    } catch (const LiftRejected&) {
    }
  }
  const RoadbookEncoder encoder(route, options.htl);
  double rb_progress = AdvanceProgress(route, 0.0, scene.spawn.position());

  SimState state = InitialState(scene, options.sim);
  policy.Reset(scene, seed);
  std::vector<Observation> history;
  const double total = scene.gt_route.length();

  while (!state.terminal) {
    history.push_back(Observe(state, scene, options.sim));
    if (static_cast<int>(history.size()) > options.history_frames) history.erase(history.begin());
    EpisodeStep step;
    step.tick = state.tick;
    step.pose = state.agent;
    step.speed = state.agent_speed;
    step.observation = history.back();
    step.roadbook = encoder.Encode(state.agent, rb_progress);
    const PolicyInput input{&state, &scene, history, &step.roadbook};
    const PlannedTrajectory traj = policy.Act(input);
    step.action = traj.Flatten();

    const double before = state.route_progress;
    ExecutionResult res = ExecuteTrajectory(state, scene, traj, options.sim);
    if (res.ticks == 0 && !state.terminal) {
      // Degenerate trajectory: hold position for one tick so time advances.
      auto ev = Step(state, scene, Control{}, options.sim);
      res.events.insert(res.events.end(), ev.begin(), ev.end());
    }
    rb_progress = AdvanceProgress(route, rb_progress, state.agent.position());
    step.reward_terms = TermsFromEvents(res.events, state.route_progress - before, total);
    step.events = std::move(res.events);
    rec.steps.push_back(std::move(step));
  }
  rec.footer.terminal = *state.terminal;
  rec.footer.final_pose = state.agent;
  rec.footer.metrics = ResultFromState(state, scene);
  return rec;
}

EpisodeRecord RunExpert(const Scene& scene, double noise_level, std::uint64_t seed,
                        RolloutOptions options) {
  ScriptedExpert expert(noise_level);
  options.source = EpisodeSource::kExpert;
  options.noise_level = noise_level;
  options.lift_route = true;
  return Rollout(scene, expert, seed, options);
}

}  // namespace urbannav
