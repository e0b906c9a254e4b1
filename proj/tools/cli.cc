#include "urbannav/cli.h"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "urbannav/error.h"
#include "urbannav/eval.h"
#include "urbannav/io.h"
#include "urbannav/replay.h"
#include "urbannav/rollout.h"
#include "urbannav/teleop.h"
#include "urbannav/trainer.h"

namespace urbannav {

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  bool no_timestamp = false;
};

void AddCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_flag("--no-timestamp", c.no_timestamp, "Omit creation timestamps");
}

TrainConfig LoadTrainConfig(const Common& c) {
  TrainConfig t;
  if (!c.config.empty()) ApplyConfig(ParseConfig(ReadFile(c.config)), t);
  t.seed = c.seed;
  return t;
}

std::string Timestamp(const Common& c) {
  if (c.no_timestamp) return "";
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Scene files of a directory in name order.
std::vector<fs::path> SceneFiles(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".scene") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .scene files in " + dir.string());
  return files;
}

std::vector<SceneKind> ParseKinds(const std::string& s) {
  if (s == "mixed") {
    return {SceneKind::kStraight, SceneKind::kL, SceneKind::kC, SceneKind::kIntersection,
            SceneKind::kObstacleCourse};
  }
  std::vector<SceneKind> kinds;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) kinds.push_back(SceneKindFromString(part));
  return kinds;
}

Mlp<float> CheckedPolicy(const Checkpoint& c) {
  if (c.policy.input_dim() != kFeatureDim || c.policy.output_dim() != kActionDim) {
    throw ParameterError("checkpoint policy has the wrong input or output size");
  }
  return c.policy;
}

TeleopServer* g_server = nullptr;

void StopServer(int) {
  if (g_server) g_server->Stop();
}

// ---------------------------------------------------------------------------

int GenScenes(const std::string& kind, int count, int obstacles, int pedestrians,
              const std::string& out_dir, const Common& c, std::ostream& out) {
  const auto kinds = ParseKinds(kind);
  if (count < 0) throw ParameterError("count must be non-negative");
  const Difficulty difficulty{obstacles, pedestrians};
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    const SceneKind k = kinds[i % kinds.size()];
    const Scene scene = GenerateScene(HashSeed(c.seed, i), k, difficulty);
    char name[64];
    std::snprintf(name, sizeof name, "%04d-%s.scene", i, ToString(k));
    SaveScene(scene, fs::path(out_dir) / name);
  }
  out << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int CollectExpert(const std::string& scenes_dir, const std::vector<double>& noises,
                  const std::string& out_dir, const Common& c, std::ostream& out) {
  if (noises.empty()) throw ParameterError("at least one noise level is required");
  const TrainConfig cfg = LoadTrainConfig(c);
  const auto files = SceneFiles(scenes_dir);
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.config_digest = ConfigDigest(DescribeConfig(cfg));
  int successes = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Scene scene = LoadScene(files[i]);
    const double noise = noises[i % noises.size()];
    RolloutOptions opts;
    opts.htl = cfg.htl;
    opts.episode_id = "expert-" + files[i].stem().string();
    opts.scene_ref = fs::relative(files[i], out_dir).generic_string();
    opts.created_at = Timestamp(c);
    const EpisodeRecord ep = RunExpert(scene, noise, HashSeed(c.seed, i), opts);
    const std::string name = opts.episode_id + ".episode";
    SaveEpisode(ep, fs::path(out_dir) / name);
    manifest.episodes.push_back(name);
    ++manifest.source_counts[ToString(EpisodeSource::kExpert)];
    successes += ep.footer.metrics.success ? 1 : 0;
  }
  WriteFileAtomic(fs::path(out_dir) / "manifest.txt", SerializeManifest(manifest));
  out << "collected " << files.size() << " episodes, " << successes << " successful\n";
  return 0;
}

int LiftCommand(const std::string& trace, const std::string& frame, const std::string& out_path,
                bool smooth, const Common& c, std::ostream& out) {
  const TrainConfig cfg = LoadTrainConfig(c);
  const Polyline raw = ImportTrace(ReadFile(trace), TraceFrameFromString(frame));
  const Polyline route = Lift(raw, cfg.htl, c.seed, {.skip_smoothing = !smooth});
  WriteFileAtomic(out_path, SerializeRoute(route));
  out << "lifted " << raw.size() << " points to " << route.size() << " route points ("
      << FormatDouble(route.length()) << " m)\n";
  return 0;
}

// Snapshot after `epochs_done` epochs; value networks only for RFT.
Checkpoint MakeCheckpoint(const RftModel& model, bool with_values, const TrainConfig& cfg,
                          int epochs_done, const EpochStats& last) {
  Checkpoint ck;
  ck.policy = model.policy;
  if (with_values) {
    ck.q = model.q;
    ck.v = model.v;
    ck.q_target = model.q_target;
  }
  ck.seed = cfg.seed;
  ck.epoch = epochs_done;
  ck.config = DescribeConfig(cfg);
  ck.config["digest"] = ConfigDigest(ck.config);
  ck.metrics["policy_loss"] = FormatDouble(last.policy_loss);
  if (with_values) {
    ck.metrics["v_loss"] = FormatDouble(last.v_loss);
    ck.metrics["q_loss"] = FormatDouble(last.q_loss);
    ck.metrics["mean_weight"] = FormatDouble(last.mean_weight);
  }
  return ck;
}

int TrainSftCommand(const std::string& dataset, const std::string& out_path, bool no_htl,
                    const std::string& route, int epochs, const Common& c, std::ostream& out) {
  TrainConfig cfg = LoadTrainConfig(c);
  if (!route.empty()) cfg.route = RouteSourceFromString(route);
  if (no_htl) cfg.route = RouteSource::kRawPath;
  if (epochs >= 0) cfg.epochs = epochs;
  const auto episodes = LoadDataset(dataset);
  EpochStats last;
  // The checkpoint is rewritten after every epoch.
  Mlp<float> net = TrainSft(episodes, cfg, [&](const EpochStats& s, const RftModel& m) {
    out << "epoch " << s.epoch << " loss " << FormatDouble(s.policy_loss) << "\n";
    last = s;
    SaveCheckpoint(MakeCheckpoint(m, false, cfg, s.epoch + 1, s), out_path);
  });
  if (cfg.epochs == 0) SaveCheckpoint(MakeCheckpoint({net, {}, {}, {}}, false, cfg, 0, last), out_path);
  out << "saved " << out_path << "\n";
  return 0;
}

int TrainRftCommand(const std::string& dataset, const std::string& init,
                    const std::string& out_path, int epochs, const Common& c, std::ostream& out) {
  TrainConfig cfg = LoadTrainConfig(c);
  if (epochs >= 0) cfg.epochs = epochs;
  const auto episodes = LoadDataset(dataset);
  const Mlp<float> start = CheckedPolicy(LoadCheckpoint(init));
  EpochStats last;
  RftModel model = TrainRft(episodes, start, cfg, [&](const EpochStats& s, const RftModel& m) {
    out << "epoch " << s.epoch << " policy " << FormatDouble(s.policy_loss) << " v "
        << FormatDouble(s.v_loss) << " q " << FormatDouble(s.q_loss) << " weight "
        << FormatDouble(s.mean_weight) << "\n";
    last = s;
    SaveCheckpoint(MakeCheckpoint(m, true, cfg, s.epoch + 1, s), out_path);
  });
  if (cfg.epochs == 0) SaveCheckpoint(MakeCheckpoint(model, true, cfg, 0, last), out_path);
  out << "saved " << out_path << "\n";
  return 0;
}

int EvalCommand(const std::string& checkpoint, const std::string& policy,
                const std::string& scenes_dir, const std::string& out_path,
                const std::string& format, int workers, const Common& c, std::ostream& out) {
  std::vector<SuiteEntry> suite;
  const auto files = SceneFiles(scenes_dir);
  for (std::size_t i = 0; i < files.size(); ++i) {
    suite.push_back({files[i].stem().string(), LoadScene(files[i]), HashSeed(c.seed, i)});
  }
  PolicyFactory factory;
  std::string digest;
  if (!checkpoint.empty()) {
    const Checkpoint ck = LoadCheckpoint(checkpoint);
    const Mlp<float> net = CheckedPolicy(ck);
    factory = [net] { return std::make_unique<LearnedPolicy>(net); };
    if (auto it = ck.config.find("digest"); it != ck.config.end()) digest = it->second;
  } else if (policy == "expert") {
    factory = [] { return std::make_unique<ScriptedExpert>(0.0); };
    digest = "expert";
  } else if (policy == "random") {
    factory = [] { return std::make_unique<RandomPolicy>(); };
    digest = "random";
  } else {
    throw ParameterError("eval needs --checkpoint or --policy expert|random");
  }
  const MetricReport report = RunBenchmark(suite, factory, {}, workers, digest);
  const std::string text =
      format == "json" ? SerializeReportJson(report) : SerializeReportTable(report);
  if (out_path.empty()) {
    out << text;
  } else {
    WriteFileAtomic(out_path, text);
    out << "SR " << FormatDouble(report.sr) << " SPL " << FormatDouble(report.spl) << " CC "
        << FormatDouble(report.cc) << " RC " << FormatDouble(report.rc) << "\n";
  }
  return 0;
}

Scene ResolveScene(const fs::path& scenes_dir, const std::string& ref) {
  if (ref.empty() || ref.find("..") != std::string::npos || fs::path(ref).is_absolute()) {
    throw Error("bad scene reference");
  }
  return LoadScene(scenes_dir / ref);
}

/// Feeds "<tick> <record>" lines to a session as a console would, ticking
/// the simulator in between. Server lines go to `out`.
void RunScript(TeleopSession& session, const std::string& script, std::ostream& out) {
  std::istringstream in(script);
  std::string line;
  int number = 0;
  auto emit = [&](const std::vector<std::string>& lines) {
    for (const auto& l : lines) out << l << "\n";
  };
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::int64_t tick = 0;
    if (!(ls >> tick)) throw ParseError("expected '<tick> <record>'", number);
    std::string record;
    std::getline(ls >> std::ws, record);
    while (session.active() && session.tick() < tick) emit(session.Tick());
    emit(session.HandleLine(record));
  }
  emit(session.Disconnect());
}

int TeleopServe(const std::string& scenes_dir, int port, const std::string& out_dir, double hz,
                double duration, const std::string& script, const Common& c, std::ostream& out) {
  TeleopOptions opts;
  opts.out_dir = out_dir;
  opts.created_at = Timestamp(c);
  fs::create_directories(out_dir);
  const fs::path dir = scenes_dir;
  SceneSource scenes = [dir](const std::string& ref) { return ResolveScene(dir, ref); };
  if (!script.empty()) {
    TeleopSession session(scenes, opts);
    RunScript(session, ReadFile(script), out);
    return 0;
  }
  TeleopServer server(scenes, opts, hz);
  const int bound = server.Listen(port);
  out << "listening on 127.0.0.1:" << bound << "\n" << std::flush;
  g_server = &server;
  std::signal(SIGINT, StopServer);
  std::signal(SIGTERM, StopServer);
  std::thread stopper;
  if (duration > 0.0) {
    stopper = std::thread([&server, duration] {
      std::this_thread::sleep_for(std::chrono::duration<double>(duration));
      server.Stop();
    });
  }
  server.Run();
  if (stopper.joinable()) stopper.join();
  g_server = nullptr;
  for (const auto& p : server.saved()) out << "saved " << p.filename().string() << "\n";
  return 0;
}

int ReplayCommand(const std::string& episode_path, const std::string& scene_path,
                  const std::string& scenes_dir, std::ostream& out) {
  const EpisodeRecord ep = LoadEpisode(episode_path);
  fs::path resolved;
  if (!scene_path.empty()) {
    resolved = scene_path;
  } else if (!scenes_dir.empty()) {
    resolved = fs::path(scenes_dir) / ep.header.scene_ref;
  } else {
    resolved = fs::path(episode_path).parent_path() / ep.header.scene_ref;
  }
  const Scene scene = LoadScene(resolved);
  const ReplayReport report = Replay(scene, ep);
  if (report.ok) {
    out << "replay ok: " << ep.steps.size() << " steps, terminal "
        << ToString(ep.footer.terminal) << "\n";
    return 0;
  }
  out << "divergence at tick " << *report.divergence_tick << ": " << report.detail << "\n";
  return 1;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Route-conditioned urban navigation testbed", "urbannav"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-scenes", "Generate procedural scenes");
  std::string kind = "mixed";
  int count = 10;
  int obstacles = -1;
  int pedestrians = -1;
  std::string out_dir;
  gen->add_option("--kind", kind, "straight|L|C|intersection|obstacle_course|mixed, or a comma list")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            try {
              ParseKinds(s);
              return {};
            } catch (const std::exception& e) {
              return e.what();
            }
          },
          "KIND"));
  gen->add_option("--count", count, "Number of scenes");
  gen->add_option("--obstacles", obstacles, "Obstacle count (-1: kind default)");
  gen->add_option("--pedestrians", pedestrians, "Pedestrian count (-1: kind default)");
  gen->add_option("--out", out_dir, "Output directory")->required();
  AddCommon(gen, common);

  auto* collect = app.add_subcommand("collect-expert", "Record scripted-expert episodes");
  std::string scenes_dir;
  std::vector<double> noises{0.0};
  collect->add_option("--scenes", scenes_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  collect->add_option("--noise", noises, "Noise levels, cycled over scenes")->delimiter(',');
  collect->add_option("--out", out_dir, "Dataset directory")->required();
  AddCommon(collect, common);

  auto* lift = app.add_subcommand("lift", "Lift a raw trace into a route");
  std::string trace;
  std::string frame = "xy";
  std::string out_path;
  bool smooth = false;
  lift->add_option("--trace", trace, "Trace file")->required()->check(CLI::ExistingFile);
  lift->add_option("--frame", frame, "xy|latlon");
  lift->add_flag("--smooth", smooth, "Smooth the trace first (noisy real-world traces)");
  lift->add_option("--out", out_path, "Route file")->required();
  AddCommon(lift, common);

  auto* sft = app.add_subcommand("train-sft", "Supervised fine-tuning");
  std::string dataset;
  bool no_htl = false;
  std::string route;
  int epochs = -1;
  sft->add_option("--dataset", dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sft->add_option("--out", out_path, "Checkpoint file")->required();
  sft->add_flag("--no-htl", no_htl, "Train on raw executed paths instead of lifted routes");
  sft->add_option("--route", route, "recorded|lifted|raw");
  sft->add_option("--epochs", epochs, "Override the configured epoch count");
  AddCommon(sft, common);

  auto* rft = app.add_subcommand("train-rft", "Reinforcement fine-tuning (IQL)");
  std::string init;
  rft->add_option("--dataset", dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  rft->add_option("--init", init, "SFT checkpoint")->required()->check(CLI::ExistingFile);
  rft->add_option("--out", out_path, "Checkpoint file")->required();
  rft->add_option("--epochs", epochs, "Override the configured epoch count");
  AddCommon(rft, common);

  auto* eval = app.add_subcommand("eval", "Benchmark a policy on a scene directory");
  std::string checkpoint;
  std::string policy;
  std::string format = "table";
  int workers = 1;
  eval->add_option("--checkpoint", checkpoint, "Policy checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--policy", policy, "expert|random instead of a checkpoint");
  eval->add_option("--scenes", scenes_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_path, "Report file (default: stdout)");
  eval->add_option("--format", format, "table|json")->check(CLI::IsMember({"table", "json"}));
  eval->add_option("--workers", workers, "Parallel episodes")->check(CLI::PositiveNumber);
  AddCommon(eval, common);

  auto* serve = app.add_subcommand("teleop-serve", "Serve teleoperation sessions");
  int port = 8765;
  double hz = 10.0;
  double duration = 0.0;
  std::string script;
  serve->add_option("--scenes", scenes_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--port", port, "TCP port (0: any free port)");
  serve->add_option("--out", out_dir, "Episode directory")->required();
  serve->add_option("--hz", hz, "Tick rate")->check(CLI::PositiveNumber);
  serve->add_option("--duration", duration, "Stop after this many seconds (0: until signalled)");
  serve->add_option("--script", script, "Run a '<tick> <record>' transcript instead of listening")
      ->check(CLI::ExistingFile);
  AddCommon(serve, common);

  auto* replay = app.add_subcommand("replay", "Re-simulate an episode and verify its events");
  std::string episode;
  std::string scene_path;
  replay->add_option("--episode", episode, "Episode file")->required()->check(CLI::ExistingFile);
  replay->add_option("--scene", scene_path, "Scene file (default: resolve the episode's scene_ref)")
      ->check(CLI::ExistingFile);
  replay->add_option("--scenes", scenes_dir, "Directory to resolve scene_ref against");
  AddCommon(replay, common);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return GenScenes(kind, count, obstacles, pedestrians, out_dir, common, out);
    if (collect->parsed()) return CollectExpert(scenes_dir, noises, out_dir, common, out);
    if (lift->parsed()) return LiftCommand(trace, frame, out_path, smooth, common, out);
    if (sft->parsed()) return TrainSftCommand(dataset, out_path, no_htl, route, epochs, common, out);
    if (rft->parsed()) return TrainRftCommand(dataset, init, out_path, epochs, common, out);
    if (eval->parsed()) {
      return EvalCommand(checkpoint, policy, scenes_dir, out_path, format, workers, common, out);
    }
    if (serve->parsed()) {
      return TeleopServe(scenes_dir, port, out_dir, hz, duration, script, common, out);
    }
    if (replay->parsed()) return ReplayCommand(episode, scene_path, scenes_dir, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace urbannav
