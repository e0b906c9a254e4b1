#include <cmath>
#include <filesystem>
#include <random>
#include <regex>
#include <sstream>
#include <unistd.h>

#include <gtest/gtest.h>

#include "support/checks.h"
#include "urbannav/error.h"
#include "urbannav/io.h"
#include "urbannav/replay.h"
#include "urbannav/rollout.h"

namespace urbannav {
namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("urbannav-io-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string Join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

int ParseErrorLine(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

EpisodeRecord SampleEpisode(double noise = 0.3) {
  const Scene scene = GenerateScene(5, SceneKind::kL);
  RolloutOptions opts;
  opts.episode_id = "ep-1";
  opts.scene_ref = "scene-5";
  opts.created_at = "2026-01-01T00:00:00Z";
  return RunExpert(scene, noise, 17, opts);
}

TEST(Numbers, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    EXPECT_EQ(std::stod(FormatDouble(v)), v);
  }
  EXPECT_EQ(FormatDouble(0.1), "0.1");
  EXPECT_EQ(FormatDouble(2.0), "2");
}

TEST(Episode, SaveLoadRoundTrip) {
  TempDir dir;
  const EpisodeRecord ep = SampleEpisode();
  SaveEpisode(ep, dir.path() / "e.ep");
  EXPECT_EQ(LoadEpisode(dir.path() / "e.ep"), ep);
  EXPECT_EQ(SerializeEpisode(ParseEpisode(SerializeEpisode(ep))), SerializeEpisode(ep));
}

TEST(Episode, SecondTerminalRejected) {
  auto lines = Lines(SerializeEpisode(SampleEpisode(0.0)));
  int last_step = -1;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].rfind("step ", 0) == 0) last_step = static_cast<int>(i);
  }
  ASSERT_GE(last_step, 0);
  const std::smatch m = [&] {
    std::smatch r;
    std::regex_search(lines[last_step], r, std::regex("events=(\\S*)success@(\\d+)"));
    return r;
  }();
  ASSERT_FALSE(m.empty());
  lines[last_step] = std::regex_replace(lines[last_step], std::regex("success@(\\d+)"),
                                        "success@$1,timeout@$1");
  EXPECT_EQ(ParseErrorLine([&] { ParseEpisode(Join(lines)); }), last_step + 1);
}

TEST(Episode, StepAfterTerminalRejected) {
  auto lines = Lines(SerializeEpisode(SampleEpisode(0.0)));
  int first_step = -1;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].rfind("step ", 0) == 0) {
      first_step = static_cast<int>(i);
      break;
    }
  }
  lines[first_step] = std::regex_replace(lines[first_step], std::regex("events=\\S*"),
                                         "events=timeout@0");
  EXPECT_EQ(ParseErrorLine([&] { ParseEpisode(Join(lines)); }), first_step + 2);
}

TEST(Episode, VersionAndTruncationRejected) {
  auto lines = Lines(SerializeEpisode(SampleEpisode()));
  auto bumped = lines;
  bumped[0] = "urbannav-episode 99";
  EXPECT_EQ(ParseErrorLine([&] { ParseEpisode(Join(bumped)); }), 1);
  auto truncated = lines;
  truncated.pop_back();
  EXPECT_THROW(ParseEpisode(Join(truncated)), ParseError);
  truncated.resize(lines.size() / 2);
  EXPECT_THROW(ParseEpisode(Join(truncated)), ParseError);
  EXPECT_THROW(ParseEpisode(""), ParseError);
}

TEST(Episode, FuzzRoundTrip) {
  const check::Verdict v = check::EpisodeFuzzRoundTrip(300);
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Scene, RoundTripAllKinds) {
  for (SceneKind k : {SceneKind::kStraight, SceneKind::kL, SceneKind::kC,
                      SceneKind::kIntersection, SceneKind::kObstacleCourse}) {
    const Scene s = GenerateScene(9, k);
    EXPECT_EQ(ParseScene(SerializeScene(s)), s) << ToString(k);
  }
  Scene offset = MakeCurvedCorridor({}, 3);
  offset.nav_route = OffsetRoute(offset.gt_route, 10.0);
  EXPECT_EQ(ParseScene(SerializeScene(offset)), offset);
}

TEST(Scene, VersionRejected) {
  auto lines = Lines(SerializeScene(GenerateScene(1, SceneKind::kStraight)));
  lines[0] = "urbannav-scene 7";
  EXPECT_EQ(ParseErrorLine([&] { ParseScene(Join(lines)); }), 1);
}

TEST(Route, RoundTrip) {
  const Polyline r({Point2(0, 0), Point2(10.125, -3.5), Point2(1e-7, 42)});
  EXPECT_EQ(ParseRoute(SerializeRoute(r)), r);
}

TEST(Trace, TwoLineStraight) {
  const Polyline p = ImportTrace("0 0\n10 0\n", TraceFrame::kXy);
  EXPECT_DOUBLE_EQ(p.length(), 10.0);
}

TEST(Trace, LatLonTenThousandthDegree) {
  const Polyline p = ImportTrace("48.0 11.0\n48.0001 11.0\n", TraceFrame::kLatLon);
  EXPECT_NEAR(p.length(), 11.1, 0.05);
  EXPECT_NEAR(p.back().y(), p.length(), 1e-9);
}

TEST(Trace, OptionalTimestampsAndComments) {
  const Polyline p = ImportTrace("# header\n0 0 0.0\n\n3 4 1.5\n", TraceFrame::kXy);
  EXPECT_DOUBLE_EQ(p.length(), 5.0);
}

TEST(Trace, MalformedThirdLine) {
  EXPECT_EQ(ParseErrorLine([] { ImportTrace("0 0\n1 0\nnot a point\n", TraceFrame::kXy); }), 3);
  EXPECT_THROW(TraceFrameFromString("utm"), ParameterError);
}

TEST(Config, ParseApplyDescribe) {
  const auto kv = ParseConfig("urbannav-config 1\n# comment\nepochs=3\nbatch_size = 16\n");
  TrainConfig cfg;
  ApplyConfig(kv, cfg);
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.batch_size, 16);
  const auto described = DescribeConfig(cfg);
  EXPECT_EQ(described.at("epochs"), "3");
  EXPECT_EQ(ConfigDigest(described), ConfigDigest(DescribeConfig(cfg)));
  EXPECT_EQ(ConfigDigest(described).size(), 16u);
}

TEST(Config, Errors) {
  EXPECT_THROW(ParseConfig("epochs=3\n"), ParseError);
  EXPECT_THROW(ParseConfig("urbannav-config 2\n"), ParseError);
  EXPECT_EQ(ParseErrorLine([] { ParseConfig("urbannav-config 1\nepochs=1\nbroken\n"); }), 3);
  TrainConfig cfg;
  EXPECT_THROW(ApplyConfig({{"no_such_key", "1"}}, cfg), ParameterError);
}

TEST(Checkpoint, RoundTrip) {
  Mlp<float> policy({5, 7, 3});
  policy.Init(3);
  Mlp<float> q({10, 4, 1});
  q.Init(4);
  Checkpoint c{policy, q, q, q, 42, 7, {{"lr", "0.001"}}, {{"policy_loss", "0.5"}}};
  const std::string bytes = SerializeCheckpoint(c);
  const Checkpoint back = ParseCheckpoint(bytes);
  EXPECT_EQ(back.policy.dims(), policy.dims());
  EXPECT_EQ(back.policy.params(), policy.params());
  ASSERT_TRUE(back.v.has_value());
  EXPECT_EQ(back.v->params(), q.params());
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.metrics, c.metrics);
  EXPECT_EQ(SerializeCheckpoint(back), bytes);
}

TEST(Checkpoint, CorruptionRejected) {
  Mlp<float> policy({2, 2});
  const std::string bytes = SerializeCheckpoint({policy, {}, {}, {}, 0, 0, {}, {}});
  EXPECT_THROW(ParseCheckpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  std::string bumped = bytes;
  bumped.replace(bumped.find(" 1"), 2, " 9");
  EXPECT_THROW(ParseCheckpoint(bumped), ParseError);
}

TEST(Dataset, ManifestRoundTripAndLoad) {
  TempDir dir;
  const EpisodeRecord ep = SampleEpisode();
  fs::create_directories(dir.path() / "episodes");
  SaveEpisode(ep, dir.path() / "episodes" / "a.ep");
  DatasetManifest m;
  m.episodes = {"episodes/a.ep"};
  m.source_counts = {{"expert", 1}};
  m.config_digest = "0123456789abcdef";
  EXPECT_EQ(ParseManifest(SerializeManifest(m)), m);
  WriteFileAtomic(dir.path() / "manifest.txt", SerializeManifest(m));
  const auto loaded = LoadDataset(dir.path() / "manifest.txt");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0], ep);
}

TEST(Files, AtomicWriteReplaces) {
  TempDir dir;
  WriteFileAtomic(dir.path() / "f", "one");
  WriteFileAtomic(dir.path() / "f", "two");
  EXPECT_EQ(ReadFile(dir.path() / "f"), "two");
  EXPECT_EQ(std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator()), 1);
  EXPECT_THROW(ReadFile(dir.path() / "missing"), Error);
}

TEST(Replay, UntamperedEpisodeReplays) {
  const Scene scene = GenerateScene(5, SceneKind::kL);
  const ReplayReport r = Replay(scene, SampleEpisode());
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Replay, TamperedActionDiverges) {
  const Scene scene = GenerateScene(5, SceneKind::kL);
  EpisodeRecord ep = SampleEpisode();
  ASSERT_GT(ep.steps.size(), 6u);
  ep.steps[4].action[1] += 0.8;
  ep.steps[4].action[4] += 0.8;
  const ReplayReport r = Replay(scene, ep);
  EXPECT_FALSE(r.ok);
  ASSERT_TRUE(r.divergence_tick.has_value());
  EXPECT_EQ(*r.divergence_tick, ep.steps[4].tick);
}

TEST(Replay, RecordReplayOracle) {
  const check::Verdict v = check::RecordReplay(20);
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Report, JsonAndTable) {
  std::vector<SceneResult> rows(1);
  rows[0].scene_id = "0000-straight";
  rows[0].result.success = true;
  rows[0].result.agent_path_length = 10;
  rows[0].result.shortest_path_length = 10;
  rows[0].result.total_route = 10;
  rows[0].result.completed_route = 10;
  const MetricReport r = MetricReport::Aggregate(rows, "abc");
  const std::string json = SerializeReportJson(r);
  for (const char* key : {"\"sr\"", "\"spl\"", "\"sns\"", "\"cc\"", "\"rc\"", "0000-straight"}) {
    EXPECT_NE(json.find(key), std::string::npos) << key;
  }
  EXPECT_NE(SerializeReportTable(r).find("0000-straight"), std::string::npos);
}

}  // namespace
}  // namespace urbannav
