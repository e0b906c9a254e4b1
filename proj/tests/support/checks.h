#pragma once

// Oracle comparisons shared by the unit tests and the acceptance runner.
// Each returns a verdict plus a one-line measurement summary.

#include <cstdint>
#include <filesystem>
#include <string>

namespace urbannav::check {

struct Verdict {
  bool pass = true;
  std::string detail;
};

/// Combines verdicts; the detail joins the parts with "; ".
Verdict All(std::initializer_list<Verdict> parts);

Verdict RewardExactness();

Verdict ResampleSpacing(int paths);
Verdict CornersVsScan(int paths);
Verdict SgPolynomialReproduction();
Verdict SelfIntersectionVsBruteForce(int paths);

Verdict CollisionVsBruteForce(int configurations);
Verdict RaycastVsMarching(int scenes, int rays_per_scene);
Verdict RecordReplay(int episodes);

Verdict FiniteDifferenceGradients();
Verdict ExpectileConvergence();
Verdict TinyBetaIsBehaviorCloning();
Verdict ToyMdpArgmax();

struct DirectionalSetup {
  int train_episodes = 300;
  int test_scenes = 50;
  int sft_epochs = 20;
  int rft_epochs = 20;
};
Verdict RftVsSft(const DirectionalSetup& setup);

struct OffsetSetup {
  int train_episodes = 300;
  int epochs = 20;
  int trials = 10;
  double offset = 10.0;
  double noise_sigma = 5.0;
};
Verdict HtlUnderRouteOffset(const OffsetSetup& setup);

Verdict StraightRoadbook();

/// Runs every CLI command twice under `workdir` and compares all outputs.
Verdict CliDeterminism(const std::filesystem::path& workdir);
Verdict EpisodeFuzzRoundTrip(int episodes);

}  // namespace urbannav::check
