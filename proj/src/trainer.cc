#include "urbannav/trainer.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "urbannav/error.h"

namespace urbannav {

const char* ToString(RouteSource s) {
  switch (s) {
    case RouteSource::kRecorded: return "recorded";
    case RouteSource::kLifted: return "lifted";
    case RouteSource::kRawPath: return "raw";
  }
  return "?";
}

RouteSource RouteSourceFromString(const std::string& s) {
  if (s == "recorded") return RouteSource::kRecorded;
  if (s == "lifted") return RouteSource::kLifted;
  if (s == "raw") return RouteSource::kRawPath;
  throw ParameterError("unknown route source: " + s);
}

std::vector<int> ChunkStarts(const EpisodeRecord& episode, double max_distance, int max_ticks) {
  std::vector<int> starts;
  const int n = static_cast<int>(episode.steps.size());
  if (episode.header.source != EpisodeSource::kTeleop) {
    starts.resize(n);
    std::iota(starts.begin(), starts.end(), 0);
    return starts;
  }
  int start = 0;
  double traveled = 0.0;
  for (int i = 0; i < n; ++i) {
    if (i == start) {
      starts.push_back(i);
      traveled = 0.0;
    }
    const Point2 next = i + 1 < n ? episode.steps[i + 1].pose.position()
                                  : episode.footer.final_pose.position();
    traveled += (next - episode.steps[i].pose.position()).norm();
    const auto ticks = (i + 1 < n ? episode.steps[i + 1].tick : episode.steps[i].tick + 1) -
                       episode.steps[start].tick;
    if (traveled >= max_distance - 1e-9 || ticks >= max_ticks) start = i + 1;
  }
  return starts;
}

PlannedTrajectory HindsightTrajectory(const EpisodeRecord& episode, int step, int n,
                                      double horizon) {
  const Pose2 frame = episode.steps.at(step).pose;
  PlannedTrajectory future;
  double length = 0.0;
  Point2 prev = frame.position();
  auto add = [&](const Point2& p) {
    length += (p - prev).norm();
    prev = p;
    const Point2 local = ToEgocentric(p, frame);
    future.waypoints.emplace_back(local.x(), local.y(), 0.0);
  };
  for (std::size_t i = step + 1; i < episode.steps.size() && length < horizon; ++i) {
    add(episode.steps[i].pose.position());
  }
  if (length < horizon) add(episode.footer.final_pose.position());
  return ResampleTrajectory(future, n, horizon);
}

namespace {

// Executed path with repeated positions removed; nullopt if degenerate.
std::optional<Polyline> PathPolyline(const EpisodeRecord& ep) {
  std::vector<Point2> pts;
  for (const Point2& p : EpisodePath(ep)) {
    if (pts.empty() || (p - pts.back()).norm() > 1e-6) pts.push_back(p);
  }
  if (pts.size() < 2) return std::nullopt;
  return Polyline(std::move(pts));
}

}  // namespace

TrainingSet::TrainingSet(const std::vector<EpisodeRecord>& episodes, const TrainConfig& config)
    : config_(config) {
  config.htl.Validate();
  int total = 0;
  for (const auto& ep : episodes) {
    EpisodeSlice slice{&ep, ChunkStarts(ep), total};
    total += static_cast<int>(slice.steps.size());
    slices_.push_back(std::move(slice));
  }
  if (total == 0) throw ParameterError("empty training dataset");
  rays_.resize(kRayFeatures, total);
  route_.resize(kFeatureDim - kRayFeatures, total);
  actions_.resize(kActionDim, total);
  rewards_.resize(total);
  done_.resize(total);
  speeds_.resize(total);
  next_.resize(total);

  for (const auto& slice : slices_) {
    const EpisodeRecord& ep = *slice.episode;
    const int count = static_cast<int>(slice.steps.size());
    for (int k = 0; k < count; ++k) {
      const int col = slice.first_sample + k;
      const int si = slice.steps[k];
      const EpisodeStep& step = ep.steps[si];
      std::vector<Observation> history;
      for (int j = std::max(0, k - kFrameStack + 1); j <= k; ++j) {
        history.push_back(ep.steps[slice.steps[j]].observation);
      }
      rays_.col(col) = EncodeFrames(history);
      speeds_[col] = step.speed;

      PlannedTrajectory target =
          step.action.size() == kActionDim
              ? ResampleTrajectory(PlannedTrajectory::FromFlat(step.action), kDefaultWaypoints)
              : HindsightTrajectory(ep, si, kDefaultWaypoints);
      actions_.col(col) = target.Flatten().cast<float>();

      // Reward terms accumulated over the chunk.
      const int end = k + 1 < count ? slice.steps[k + 1] : static_cast<int>(ep.steps.size());
      RewardTerms terms;
      for (int j = si; j < end; ++j) {
        terms.completion += ep.steps[j].reward_terms.completion;
        terms.collision = std::max(terms.collision, ep.steps[j].reward_terms.collision);
        terms.deviation = std::max(terms.deviation, ep.steps[j].reward_terms.deviation);
      }
      terms.completion = std::clamp(terms.completion, 0.0, 1.0);
      rewards_[col] = static_cast<float>(Reward(terms));
      const bool last = k + 1 == count;
      done_[col] = last ? 1.0f : 0.0f;
      next_[col] = last ? col : col + 1;
    }
  }
}

void TrainingSet::FillRoutes(const EpisodeSlice& slice, int episode_index, int epoch) {
  const EpisodeRecord& ep = *slice.episode;
  std::optional<Polyline> route;
  if (config_.route != RouteSource::kRecorded) route = PathPolyline(ep);
  if (route && config_.route == RouteSource::kLifted) {
    const std::uint64_t seed =
        HashSeed(HashSeed(config_.seed, static_cast<std::uint64_t>(episode_index)),
                 static_cast<std::uint64_t>(epoch));
    try {
      route = Lift(*route, config_.htl, seed,
                   {.skip_smoothing = ep.header.source != EpisodeSource::kTeleop});
    } catch (const LiftRejected&) {
      // Too short or broken to lift: fall back to the raw path.
    }
  }
  std::optional<RoadbookEncoder> encoder;
  if (route) encoder.emplace(*route, config_.htl);
  double progress = 0.0;
  for (std::size_t k = 0; k < slice.steps.size(); ++k) {
    const int col = slice.first_sample + static_cast<int>(k);
    const EpisodeStep& step = ep.steps[slice.steps[k]];
    Roadbook rb = step.roadbook;
    if (encoder) {
      progress = AdvanceProgress(encoder->route(), progress, step.pose.position());
      rb = encoder->Encode(step.pose, progress);
    }
    route_.col(col) = EncodeRouteAndSpeed(rb, speeds_[col]);
  }
}

void TrainingSet::PrepareEpoch(int epoch) {
  const bool redraw = config_.route == RouteSource::kLifted;
  if (prepared_epoch_ >= 0 && !redraw) return;
  if (prepared_epoch_ == epoch) return;
  for (std::size_t e = 0; e < slices_.size(); ++e) {
    FillRoutes(slices_[e], static_cast<int>(e), redraw ? epoch : 0);
  }
  prepared_epoch_ = epoch;
}

Eigen::MatrixXf TrainingSet::States(std::span<const int> idx) const {
  Eigen::MatrixXf out(kFeatureDim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(i).head<kRayFeatures>() = rays_.col(idx[i]);
    out.col(i).tail<kFeatureDim - kRayFeatures>() = route_.col(idx[i]);
  }
  return out;
}

Eigen::MatrixXf TrainingSet::NextStates(std::span<const int> idx) const {
  std::vector<int> next(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) next[i] = next_[idx[i]];
  return States(next);
}

Eigen::MatrixXf TrainingSet::Actions(std::span<const int> idx) const {
  Eigen::MatrixXf out(kActionDim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = actions_.col(idx[i]);
  return out;
}

Eigen::VectorXf TrainingSet::Rewards(std::span<const int> idx) const {
  Eigen::VectorXf out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = rewards_[idx[i]];
  return out;
}

Eigen::VectorXf TrainingSet::Done(std::span<const int> idx) const {
  Eigen::VectorXf out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = done_[idx[i]];
  return out;
}

namespace {

std::vector<std::vector<int>> EpochBatches(Eigen::Index size, int batch_size, std::uint64_t seed,
                                           int epoch) {
  if (batch_size <= 0) throw ParameterError("batch size must be positive");
  std::vector<int> order(size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(HashSeed(seed, 0xba7c0000ULL + static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates with our own draws: std::shuffle is not portable across
  // standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(order.size(), i + batch_size));
  }
  return batches;
}

}  // namespace

Mlp<float> TrainSft(const std::vector<EpisodeRecord>& episodes, const TrainConfig& config,
                    const EpochCallback& on_epoch) {
  TrainingSet data(episodes, config);
  RftModel model{MakePolicyNet(config.seed), {}, {}, {}};
  Adam<float> opt;
  opt.lr = config.lr;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    data.PrepareEpoch(epoch);
    EpochStats stats{epoch, 0, 0, 0, 0};
    const auto batches = EpochBatches(data.size(), config.batch_size, config.seed, epoch);
    for (const auto& b : batches) {
      stats.policy_loss += SftStep(model.policy, opt, data.States(b), data.Actions(b));
    }
    stats.policy_loss /= static_cast<double>(batches.size());
    if (on_epoch) on_epoch(stats, model);
  }
  return std::move(model.policy);
}

RftModel TrainRft(const std::vector<EpisodeRecord>& episodes, const Mlp<float>& init,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (init.input_dim() != kFeatureDim || init.output_dim() != kActionDim) {
    throw ParameterError("initial policy has incompatible dimensions");
  }
  TrainingSet data(episodes, config);
  RftModel model{init, {}, {}, {}};
  IqlConfig iql = config.iql;
  iql.lr = config.lr;
  IqlLearner<float> learner(model.policy, kPolicyTapLayer, config.value_hidden, iql,
                            HashSeed(config.seed, 0x1f1));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    data.PrepareEpoch(epoch);
    EpochStats stats{epoch, 0, 0, 0, 0};
    const auto batches = EpochBatches(data.size(), config.batch_size, config.seed, epoch);
    for (const auto& b : batches) {
      IqlBatch<float> batch{data.States(b), data.Actions(b), data.Rewards(b),
                            data.NextStates(b), data.Done(b)};
      const IqlLosses l = learner.Update(batch);
      stats.policy_loss += l.policy;
      stats.v_loss += l.v;
      stats.q_loss += l.q;
      stats.mean_weight += l.mean_weight;
    }
    const double nb = static_cast<double>(batches.size());
    stats.policy_loss /= nb;
    stats.v_loss /= nb;
    stats.q_loss /= nb;
    stats.mean_weight /= nb;
    model.q = learner.q();
    model.v = learner.v();
    model.q_target = learner.q_target();
    if (on_epoch) on_epoch(stats, model);
  }
  model.q = learner.q();
  model.v = learner.v();
  model.q_target = learner.q_target();
  return model;
}

}  // namespace urbannav
