#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "support/checks.h"
#include "urbannav/error.h"
#include "urbannav/eval.h"
#include "urbannav/io.h"
#include "urbannav/iql.h"
#include "urbannav/policy.h"
#include "urbannav/trainer.h"

namespace urbannav {
namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

MatD Random(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatD m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = g(rng);
  }
  return m;
}

TEST(Reward, Examples) {
  EXPECT_EQ(Reward({0.1, 0, 0}), 0.05);
  EXPECT_EQ(Reward({0.0, 1, 1}), -2.0);
  EXPECT_EQ(Reward({0.0, 0, 0}), 0.0);
  const check::Verdict v = check::RewardExactness();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Reward, OutOfRangeTermsRejected) {
  EXPECT_THROW(Reward({1.5, 0, 0}), ParameterError);
  EXPECT_THROW(Reward({-0.1, 0, 0}), ParameterError);
  EXPECT_THROW(Reward({0.0, 2, 0}), ParameterError);
}

TEST(Mlp, ZeroWeightsGiveBias) {
  Mlp<double> net({3, 4, 2});
  net.b(1) << 0.25, -1.5;
  const MatD out = net.Forward(MatD::Random(3, 5));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    EXPECT_EQ(out(0, j), 0.25);
    EXPECT_EQ(out(1, j), -1.5);
  }
}

TEST(Mlp, WrongInputDimension) {
  Mlp<double> net({3, 4, 2});
  EXPECT_THROW(net.Forward(MatD::Zero(2, 1)), ParameterError);
  EXPECT_THROW(Mlp<double>({3}), ParameterError);
}

TEST(Mlp, ParameterCount) {
  const Mlp<float> net = MakePolicyNet(1);
  const Eigen::Index expected = 512 * (kFeatureDim + 1) + 3 * 512 * 513 + kActionDim * 513;
  EXPECT_EQ(net.num_params(), expected);
  EXPECT_EQ(net.output_dim(), 24);
}

TEST(Mlp, StopAfterReturnsTap) {
  Mlp<double> net({3, 5, 6, 2});
  net.Init(4);
  Mlp<double>::Tape tape;
  const MatD x = MatD::Random(3, 4);
  net.Forward(x, &tape);
  EXPECT_EQ(net.Forward(x, nullptr, 2), tape.h[2]);
}

TEST(Losses, MseOfHalves) {
  const MatD pred = MatD::Constant(24, 7, 0.5);
  const MatD target = MatD::Zero(24, 7);
  EXPECT_DOUBLE_EQ(TrajectoryMse(pred, target, static_cast<MatD*>(nullptr)), 0.25);
}

TEST(Losses, ExpectileExamples) {
  EXPECT_DOUBLE_EQ(ExpectileLoss(2.0, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(ExpectileLoss(-1.0, 0.7), 0.3);
  EXPECT_DOUBLE_EQ(ExpectileLoss(1.0, 0.7), 0.7);
}

TEST(Losses, ShapeMismatchRejected) {
  const MatD a = MatD::Zero(2, 3), b = MatD::Zero(3, 3);
  EXPECT_THROW(TrajectoryMse(a, b, static_cast<MatD*>(nullptr)), ParameterError);
}

TEST(Gradients, FiniteDifferences) {
  const check::Verdict v = check::FiniteDifferenceGradients();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Training, MemorisationLossDecreases) {
  std::mt19937_64 rng(8);
  Mlp<double> net({10, 32, 32, 6});
  net.Init(2);
  const MatD x = Random(rng, 10, 16);
  const MatD y = Random(rng, 6, 16);
  Adam<double> opt;
  opt.lr = 1e-3;
  std::vector<double> losses;
  for (int step = 0; step < 300; ++step) losses.push_back(SftStep(net, opt, x, y));
  EXPECT_LT(losses[20], losses[0]);
  EXPECT_LT(losses[299], losses[20]);
}

TEST(Iql, ZeroAdvantageGivesUnitWeights) {
  Mlp<double> pi({4, 8, 3});
  pi.Init(1);
  IqlLearner<double> learner(pi, 1, {8}, IqlConfig{}, 2);
  learner.q().params().setZero();
  learner.v().params().setZero();
  std::mt19937_64 rng(3);
  const VecD w = learner.Weights(learner.Embed(Random(rng, 4, 10)), Random(rng, 3, 10));
  for (Eigen::Index i = 0; i < w.size(); ++i) EXPECT_EQ(w(i), 1.0);
}

TEST(Iql, ValueUpdatesDoNotTouchPolicy) {
  std::mt19937_64 rng(5);
  Mlp<double> pi({6, 8, 8, 4});
  pi.Init(7);
  IqlBatch<double> batch;
  batch.states = Random(rng, 6, 12);
  batch.actions = pi.Forward(batch.states);
  batch.rewards = Random(rng, 12, 1);
  batch.next_states = Random(rng, 6, 12);
  batch.done = VecD::Zero(12);
  IqlLearner<double> learner(pi, 2, {16}, IqlConfig{}, 9);
  const VecD before = pi.params();
  const VecD v_before = learner.v().params();
  const VecD q_before = learner.q().params();
  learner.Update(batch);
  EXPECT_EQ(pi.params(), before);
  EXPECT_NE(learner.v().params(), v_before);
  EXPECT_NE(learner.q().params(), q_before);
}

TEST(Iql, TargetCopiedOnSchedule) {
  std::mt19937_64 rng(6);
  Mlp<double> pi({3, 4, 2});
  pi.Init(1);
  IqlConfig cfg;
  cfg.target_copy_every = 3;
  IqlLearner<double> learner(pi, 1, {4}, cfg, 2);
  IqlBatch<double> batch{Random(rng, 3, 5), Random(rng, 2, 5), Random(rng, 5, 1),
                         Random(rng, 3, 5), VecD::Zero(5)};
  const VecD initial = learner.q_target().params();
  learner.Update(batch);
  learner.Update(batch);
  EXPECT_EQ(learner.q_target().params(), initial);
  learner.Update(batch);
  EXPECT_EQ(learner.q_target().params(), learner.q().params());
}

TEST(Iql, InconsistentBatchRejected) {
  Mlp<double> pi({3, 4, 2});
  IqlLearner<double> learner(pi, 1, {4}, IqlConfig{}, 2);
  IqlBatch<double> batch{MatD::Zero(3, 5), MatD::Zero(2, 4), VecD::Zero(5), MatD::Zero(3, 5),
                         VecD::Zero(5)};
  EXPECT_THROW(learner.Update(batch), ParameterError);
  EXPECT_THROW(IqlLearner<double>(pi, 0, {4}, IqlConfig{}, 2), ParameterError);
}

TEST(Iql, ExpectileConvergence) {
  const check::Verdict v = check::ExpectileConvergence();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Iql, TinyBetaIsBehaviorCloning) {
  const check::Verdict v = check::TinyBetaIsBehaviorCloning();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Iql, ToyMdpArgmax) {
  const check::Verdict v = check::ToyMdpArgmax();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Features, Layout) {
  Observation obs;
  obs.depths.setConstant(7.5);
  Roadbook rb;
  rb.waypoints = {Point2(2, 0), Point2(4, 0)};
  rb.turn_cue = {TurnDirection::kRight, 20.0};
  const std::vector<Observation> history{obs};
  const FeatureVector f = EncodeFeatures(history, rb, 1.0);
  EXPECT_EQ(f.size(), kFeatureDim);
  for (int i = 0; i < kRayFeatures; ++i) EXPECT_FLOAT_EQ(f[i], 0.5f);
  EXPECT_FLOAT_EQ(f[kRayFeatures], 2.0f / 40.0f);
  EXPECT_FLOAT_EQ(f[kRayFeatures + 2], 4.0f / 40.0f);
  for (int i = kRayFeatures + 4; i < kRayFeatures + kRoadbookFeatures; ++i) EXPECT_EQ(f[i], 0.0f);
  for (int i = 0; i < kFeatureDim; ++i) EXPECT_TRUE(std::isfinite(f[i]));
}

TEST(Features, OldestFramePadsShortHistory) {
  Observation a, b;
  a.depths.setConstant(3.0);
  b.depths.setConstant(12.0);
  const std::vector<Observation> two{a, b};
  const std::vector<Observation> padded{a, a, a, b};
  EXPECT_EQ(EncodeFrames(two), EncodeFrames(padded));
}

TEST(Features, PoolingTakesMinimum) {
  Observation obs;
  obs.depths.setConstant(15.0);
  obs.depths[1] = 3.0;
  const auto pooled = PoolObservation(obs);
  EXPECT_FLOAT_EQ(pooled[0], 0.2f);
  EXPECT_FLOAT_EQ(pooled[1], 1.0f);
}

TEST(Actions, DecodeClamps) {
  Eigen::VectorXf out(6);
  out << 100.0f, 0.0f, 0.1f, 100.0f, 100.0f, 0.2f;
  const PlannedTrajectory t = DecodeAction(out);
  ASSERT_EQ(t.waypoints.size(), 2u);
  EXPECT_NEAR(t.waypoints[0].position().norm(), 0.5, 1e-6);
  EXPECT_LE((t.waypoints[1].position() - t.waypoints[0].position()).norm(), 0.5 + 1e-6);
  for (const auto& w : t.waypoints) {
    EXPECT_LE(std::abs(w.x), 5.0);
    EXPECT_LE(std::abs(w.y), 5.0);
  }
  EXPECT_THROW(DecodeAction(Eigen::VectorXf::Zero(5)), ParameterError);
}

TEST(Actions, ResampleTrajectoryEqualSpacing) {
  PlannedTrajectory t;
  t.waypoints = {Pose2(1, 0, 0), Pose2(1, 1, M_PI / 2), Pose2(1, 3, M_PI / 2)};
  const PlannedTrajectory r = ResampleTrajectory(t, 8, 2.0);
  ASSERT_EQ(r.waypoints.size(), 8u);
  EXPECT_NEAR(r.waypoints.back().x, 1.0, 1e-12);
  EXPECT_NEAR(r.waypoints.back().y, 1.0, 1e-12);
  EXPECT_NEAR(r.waypoints[3].x, 1.0, 1e-12);
}

std::vector<EpisodeRecord> ExpertEpisodes(std::uint64_t seed, int n,
                                          const std::vector<SceneKind>& kinds, double noise) {
  std::vector<EpisodeRecord> out;
  for (const auto& entry : MakeSuite(seed, n, kinds)) {
    out.push_back(RunExpert(entry.scene, noise, entry.seed));
  }
  return out;
}

TEST(Training, HindsightTrajectoryInStepFrame) {
  const auto eps = ExpertEpisodes(4, 1, {SceneKind::kStraight}, 0.0);
  const PlannedTrajectory t = HindsightTrajectory(eps[0], 0, 8);
  ASSERT_EQ(t.waypoints.size(), 8u);
  EXPECT_GT(t.waypoints.back().x, 1.0);
  EXPECT_LE(t.PathLength(), 2.0 + 1e-6);
}

TEST(Training, EmptyDatasetRejected) {
  EXPECT_THROW(TrainSft({}, TrainConfig{}), ParameterError);
}

TEST(Training, SameSeedBitIdenticalCheckpoints) {
  const auto eps = ExpertEpisodes(9, 4, {SceneKind::kL, SceneKind::kObstacleCourse}, 0.3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.seed = 5;
  auto run = [&] {
    const Mlp<float> sft = TrainSft(eps, cfg);
    const RftModel rft = TrainRft(eps, sft, cfg);
    Checkpoint c{rft.policy, rft.q, rft.v, rft.q_target, cfg.seed, cfg.epochs, {}, {}};
    return SerializeCheckpoint(c);
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, SftLearnsStraightCorridors) {
  // Noise-free demonstrations never show recovery from drift; mildly
  // perturbed ones do.
  const auto eps = ExpertEpisodes(21, 200, {SceneKind::kStraight}, 0.3);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 1;
  const Mlp<float> net = TrainSft(eps, cfg);
  const auto suite = MakeSuite(4040, 20, {SceneKind::kStraight});
  const MetricReport r = RunBenchmark(
      suite, [&net] { return std::make_unique<LearnedPolicy>(net); }, RolloutOptions{});
  EXPECT_GE(r.sr, 0.95) << "SR " << r.sr;
}

}  // namespace
}  // namespace urbannav
