#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "urbannav/episode.h"
#include "urbannav/iql.h"
#include "urbannav/policy.h"

namespace urbannav {

/// Where training roadbooks come from.
enum class RouteSource {
  kRecorded,  // roadbooks stored in the episode
  kLifted,    // heuristic lifting of the executed path, re-drawn every epoch
  kRawPath,   // the executed path itself (idealized route input)
};

const char* ToString(RouteSource s);
RouteSource RouteSourceFromString(const std::string& s);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  double lr = 3e-4;
  std::uint64_t seed = 0;
  RouteSource route = RouteSource::kLifted;
  HtlParams htl;
  IqlConfig iql;
  std::vector<int> value_hidden{256, 256};
};

/// Samples of an offline dataset. Teleop episodes, recorded per tick, are
/// cut into query-sized chunks; other episodes yield one sample per step.
class TrainingSet {
 public:
  TrainingSet(const std::vector<EpisodeRecord>& episodes, const TrainConfig& config);

  /// Recomputes route features for `epoch` (lifting is re-drawn per epoch).
  void PrepareEpoch(int epoch);

  Eigen::Index size() const { return static_cast<Eigen::Index>(next_.size()); }
  Eigen::MatrixXf States(std::span<const int> idx) const;
  Eigen::MatrixXf NextStates(std::span<const int> idx) const;
  Eigen::MatrixXf Actions(std::span<const int> idx) const;
  Eigen::VectorXf Rewards(std::span<const int> idx) const;
  Eigen::VectorXf Done(std::span<const int> idx) const;

  const Eigen::MatrixXf& targets() const { return actions_; }

 private:
  struct EpisodeSlice {
    const EpisodeRecord* episode;
    std::vector<int> steps;  // step index per sample
    int first_sample;
  };

  void FillRoutes(const EpisodeSlice& slice, int episode_index, int epoch);

  const TrainConfig config_;
  std::vector<EpisodeSlice> slices_;
  Eigen::MatrixXf rays_;
  Eigen::MatrixXf route_;
  Eigen::MatrixXf actions_;
  Eigen::VectorXf rewards_;
  Eigen::VectorXf done_;
  std::vector<double> speeds_;
  std::vector<int> next_;
  int prepared_epoch_ = -1;
};

/// Step indices of an episode at which a training sample starts.
std::vector<int> ChunkStarts(const EpisodeRecord& episode, double max_distance = 1.5,
                             int max_ticks = 20);

/// Hindsight trajectory: the executed path after step `step`, over the next
/// `horizon` meters, in the frame of that step.
PlannedTrajectory HindsightTrajectory(const EpisodeRecord& episode, int step, int n,
                                      double horizon = kTrajectoryHorizon);

struct EpochStats {
  int epoch = 0;
  double policy_loss = 0.0;
  double v_loss = 0.0;
  double q_loss = 0.0;
  double mean_weight = 0.0;
};

struct RftModel {
  Mlp<float> policy;
  Mlp<float> q;
  Mlp<float> v;
  Mlp<float> q_target;
};

using EpochCallback = std::function<void(const EpochStats&, const RftModel&)>;

/// Supervised fine-tuning. Throws ParameterError on an empty dataset.
Mlp<float> TrainSft(const std::vector<EpisodeRecord>& episodes, const TrainConfig& config,
                    const EpochCallback& on_epoch = {});

/// Reinforcement fine-tuning with IQL, starting from `init`.
RftModel TrainRft(const std::vector<EpisodeRecord>& episodes, const Mlp<float>& init,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace urbannav
