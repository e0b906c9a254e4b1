#include "urbannav/episode.h"

#include "urbannav/error.h"

namespace urbannav {

const char* ToString(EpisodeSource s) {
  switch (s) {
    case EpisodeSource::kExpert: return "expert";
    case EpisodeSource::kTeleop: return "teleop";
    case EpisodeSource::kPolicy: return "policy";
  }
  return "?";
}

EpisodeSource EpisodeSourceFromString(const std::string& s) {
  if (s == "expert") return EpisodeSource::kExpert;
  if (s == "teleop") return EpisodeSource::kTeleop;
  if (s == "policy") return EpisodeSource::kPolicy;
  throw ParameterError("unknown episode source: " + s);
}

std::vector<Point2> EpisodePath(const EpisodeRecord& episode) {
  std::vector<Point2> path;
  path.reserve(episode.steps.size() + 1);
  for (const auto& step : episode.steps) path.push_back(step.pose.position());
  path.push_back(episode.footer.final_pose.position());
  return path;
}

}  // namespace urbannav
