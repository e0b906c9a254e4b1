#include "urbannav/eval.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "urbannav/error.h"

namespace urbannav {

double Spl(const EpisodeResult& r) {
  if (!(r.shortest_path_length > 0.0)) throw ParameterError("shortest path length must be positive");
  if (!r.success) return 0.0;
  return r.shortest_path_length / std::max(r.agent_path_length, r.shortest_path_length);
}

double Spl(std::span<const EpisodeResult> results) {
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : results) sum += Spl(r);
  return sum / static_cast<double>(results.size());
}

double RouteCompletion(const EpisodeResult& r) {
  if (!(r.total_route > 0.0)) return 0.0;
  return std::clamp(r.completed_route / r.total_route, 0.0, 1.0);
}

double CumulativeCost(const EpisodeResult& r) { return r.collision_steps; }

double SocialNavigationScore(const EpisodeResult& r) {
  const double violations = std::min(1.0, r.social_violation_steps / 100.0);
  return 0.5 * (r.success ? 1.0 : 0.0) + 0.5 * (1.0 - violations);
}

MetricReport MetricReport::Aggregate(std::vector<SceneResult> rows, std::string config_digest) {
  std::sort(rows.begin(), rows.end(), [](const SceneResult& a, const SceneResult& b) {
    return a.scene_id < b.scene_id;
  });
  MetricReport rep;
  rep.config_digest = std::move(config_digest);
  const double n = static_cast<double>(rows.size());
  if (!rows.empty()) {
    for (const auto& row : rows) {
      rep.sr += row.result.success ? 1.0 : 0.0;
      rep.spl += Spl(row.result);
      rep.sns += SocialNavigationScore(row.result);
      rep.cc += CumulativeCost(row.result);
      rep.rc += RouteCompletion(row.result);
    }
    rep.sr /= n;
    rep.spl /= n;
    rep.sns /= n;
    rep.cc /= n;
    rep.rc /= n;
  }
  rep.rows = std::move(rows);
  return rep;
}

MetricReport RunBenchmark(const std::vector<SuiteEntry>& suite, const PolicyFactory& factory,
                          const RolloutOptions& options, int workers,
                          const std::string& config_digest) {
  std::vector<SceneResult> rows(suite.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    auto policy = factory();
    for (std::size_t i = next++; i < suite.size(); i = next++) {
      try {
        const SuiteEntry& e = suite[i];
        RolloutOptions opts = options;
        opts.scene_ref = e.scene_id;
        const EpisodeRecord rec = Rollout(e.scene, *policy, e.seed, opts);
        rows[i] = {e.scene_id, e.scene.kind, e.seed, rec.footer.metrics};
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(suite.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return MetricReport::Aggregate(std::move(rows), config_digest);
}

std::string FormatReportTable(const MetricReport& report) {
  std::ostringstream out;
  char buf[256];
  out << "SR\tSPL\tSNS\tCC\tRC\tepisodes\n";
  std::snprintf(buf, sizeof buf, "%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%zu\n", report.sr, report.spl,
                report.sns, report.cc, report.rc, report.rows.size());
  out << buf << "\n";
  out << "scene\tkind\tseed\tsuccess\tterminal\tSPL\tSNS\tCC\tRC\n";
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "\t%s\t%llu\t%d\t%s\t%.4f\t%.4f\t%d\t%.4f\n",
                  ToString(row.kind), static_cast<unsigned long long>(row.seed),
                  row.result.success ? 1 : 0, ToString(row.result.terminal), Spl(row.result),
                  SocialNavigationScore(row.result), row.result.collision_steps,
                  RouteCompletion(row.result));
    out << row.scene_id << buf;
  }
  return out.str();
}

std::vector<SuiteEntry> MakeSuite(std::uint64_t base_seed, int count,
                                  const std::vector<SceneKind>& kinds,
                                  const Difficulty& difficulty) {
  if (kinds.empty()) throw ParameterError("suite needs at least one scene kind");
  std::vector<SuiteEntry> suite;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = HashSeed(base_seed, static_cast<std::uint64_t>(i));
    const SceneKind kind = kinds[i % kinds.size()];
    char id[64];
    std::snprintf(id, sizeof id, "%04d-%s", i, ToString(kind));
    suite.push_back({id, GenerateScene(seed, kind, difficulty), seed});
  }
  return suite;
}

}  // namespace urbannav
