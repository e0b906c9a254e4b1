#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "urbannav/episode.h"
#include "urbannav/eval.h"
#include "urbannav/nn.h"
#include "urbannav/scene.h"
#include "urbannav/trainer.h"

namespace urbannav {

namespace fs = std::filesystem;

inline constexpr int kEpisodeFormatVersion = 1;
inline constexpr int kSceneFormatVersion = 1;
inline constexpr int kRouteFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;
inline constexpr int kConfigFormatVersion = 1;

/// Shortest decimal that reads back to the same double.
std::string FormatDouble(double v);
/// Writes `content` to a sibling temp file and renames it over `path`.
void WriteFileAtomic(const fs::path& path, const std::string& content);
std::string ReadFile(const fs::path& path);

// Episodes: one header line, one line per step, footer, end marker.
std::string SerializeEpisode(const EpisodeRecord& episode);
EpisodeRecord ParseEpisode(const std::string& text);
void SaveEpisode(const EpisodeRecord& episode, const fs::path& path);
EpisodeRecord LoadEpisode(const fs::path& path);

// Scenes.
std::string SerializeScene(const Scene& scene);
Scene ParseScene(const std::string& text);
void SaveScene(const Scene& scene, const fs::path& path);
Scene LoadScene(const fs::path& path);

// Routes: "x y" per line.
std::string SerializeRoute(const Polyline& route);
Polyline ParseRoute(const std::string& text);

enum class TraceFrame { kXy, kLatLon };
TraceFrame TraceFrameFromString(const std::string& s);

/// Raw trajectory from "x y [t]" or "lat lon [t]" lines. Lat/lon is
/// projected equirectangularly about the first point (x east, y north).
Polyline ImportTrace(const std::string& text, TraceFrame frame);

struct DatasetManifest {
  std::vector<std::string> episodes;  // paths relative to the manifest
  std::map<std::string, int> source_counts;
  std::string config_digest;
  bool operator==(const DatasetManifest&) const = default;
};

std::string SerializeManifest(const DatasetManifest& m);
DatasetManifest ParseManifest(const std::string& text);
/// Loads every episode referenced by the manifest at `path`.
std::vector<EpisodeRecord> LoadDataset(const fs::path& path);

struct Checkpoint {
  Mlp<float> policy;
  std::optional<Mlp<float>> q;
  std::optional<Mlp<float>> v;
  std::optional<Mlp<float>> q_target;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> metrics;
};

/// Text header ending in "end-header", then little-endian float32 blocks
/// in header order (policy, q, v, q_target).
std::string SerializeCheckpoint(const Checkpoint& c);
Checkpoint ParseCheckpoint(const std::string& bytes);
void SaveCheckpoint(const Checkpoint& c, const fs::path& path);
Checkpoint LoadCheckpoint(const fs::path& path);

/// key=value file; '#' starts a comment. The first non-comment line must be
/// the version line "urbannav-config 1".
std::map<std::string, std::string> ParseConfig(const std::string& text);
/// Applies recognised keys; throws ParameterError on unknown ones.
void ApplyConfig(const std::map<std::string, std::string>& kv, TrainConfig& train);
std::map<std::string, std::string> DescribeConfig(const TrainConfig& train);
/// FNV-1a over the sorted key=value pairs, as 16 hex digits.
std::string ConfigDigest(const std::map<std::string, std::string>& kv);

std::string SerializeReportTable(const MetricReport& report);
std::string SerializeReportJson(const MetricReport& report);

}  // namespace urbannav
