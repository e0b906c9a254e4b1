#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "urbannav/episode.h"
#include "urbannav/rollout.h"
#include "urbannav/scene.h"

namespace urbannav {

/// success * shortest / max(agent, shortest). Throws ParameterError when the
/// shortest path length is not positive.
double Spl(const EpisodeResult& r);
double Spl(std::span<const EpisodeResult> results);

/// completed / total, clamped to [0, 1].
double RouteCompletion(const EpisodeResult& r);

/// Number of ticks with a collision event.
double CumulativeCost(const EpisodeResult& r);

/// 0.5 * success + 0.5 * (1 - min(1, near-miss ticks / 100)).
double SocialNavigationScore(const EpisodeResult& r);

struct SuiteEntry {
  std::string scene_id;
  Scene scene;
  std::uint64_t seed = 0;
};

struct SceneResult {
  std::string scene_id;
  SceneKind kind = SceneKind::kStraight;
  std::uint64_t seed = 0;
  EpisodeResult result;
  bool operator==(const SceneResult&) const = default;
};

struct MetricReport {
  std::vector<SceneResult> rows;  // sorted by scene id
  double sr = 0.0;
  double spl = 0.0;
  double sns = 0.0;
  double cc = 0.0;
  double rc = 0.0;
  std::string config_digest;

  /// Sorts rows and recomputes the aggregates.
  static MetricReport Aggregate(std::vector<SceneResult> rows, std::string config_digest);
  bool operator==(const MetricReport&) const = default;
};

using PolicyFactory = std::function<std::unique_ptr<NavigationPolicy>()>;

/// Runs one episode per suite entry, `workers` scenes in parallel, each
/// with a fresh policy from `factory`.
MetricReport RunBenchmark(const std::vector<SuiteEntry>& suite, const PolicyFactory& factory,
                          const RolloutOptions& options, int workers = 1,
                          const std::string& config_digest = "");

/// Tab-separated summary followed by one row per scene.
std::string FormatReportTable(const MetricReport& report);

/// Procedural suite: scene i uses seed HashSeed(base_seed, i) and cycles
/// through `kinds`.
std::vector<SuiteEntry> MakeSuite(std::uint64_t base_seed, int count,
                                  const std::vector<SceneKind>& kinds,
                                  const Difficulty& difficulty = {});

}  // namespace urbannav
