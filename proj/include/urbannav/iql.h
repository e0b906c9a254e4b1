#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include <Eigen/Core>

#include "urbannav/episode.h"
#include "urbannav/error.h"
#include "urbannav/nn.h"

namespace urbannav {

struct RewardWeights {
  double completion = 0.5;
  double collision = 1.0;
  double deviation = 1.0;
};

/// r = 0.5 * completion - collision - deviation. Throws ParameterError for
/// out-of-range terms.
double Reward(const RewardTerms& terms, const RewardWeights& w = {});

/// |tau - 1(u < 0)| * u^2
template <typename Scalar>
Scalar ExpectileLoss(Scalar u, Scalar tau) {
  const Scalar weight = u < Scalar(0) ? Scalar(1) - tau : tau;
  return weight * u * u;
}

template <typename Scalar>
Scalar ExpectileGrad(Scalar u, Scalar tau) {
  const Scalar weight = u < Scalar(0) ? Scalar(1) - tau : tau;
  return Scalar(2) * weight * u;
}

/// Mean squared error per sample divided by the action size; returns the
/// loss and writes dL/dpred.
template <typename Matrix>
typename Matrix::Scalar TrajectoryMse(const Matrix& pred, const Matrix& target, Matrix* dpred) {
  using Scalar = typename Matrix::Scalar;
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ParameterError("prediction and target shapes differ");
  }
  const Scalar scale = Scalar(1) / static_cast<Scalar>(pred.cols() * pred.rows());
  const Matrix diff = pred - target;
  if (dpred) *dpred = Scalar(2) * scale * diff;
  return scale * diff.squaredNorm();
}

/// mean_i w_i * ||pred_i - target_i||^2
template <typename Matrix, typename Weights>
typename Matrix::Scalar WeightedRegression(const Matrix& pred, const Matrix& target,
                                           const Weights& weights, Matrix* dpred) {
  using Scalar = typename Matrix::Scalar;
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      weights.size() != pred.cols()) {
    throw ParameterError("prediction, target and weight shapes differ");
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(pred.cols());
  const Matrix diff = pred - target;
  if (dpred) *dpred = (Scalar(2) * inv_n) * (diff.array().rowwise() * weights.transpose().array()).matrix();
  return inv_n * (diff.colwise().squaredNorm().array() * weights.transpose().array()).sum();
}

struct IqlConfig {
  double gamma = 0.99;
  double expectile = 0.7;
  double beta = 3.0;
  double adv_clip = 100.0;
  int target_copy_every = 500;
  double lr = 3e-4;
};

struct IqlLosses {
  double v = 0.0;
  double q = 0.0;
  double policy = 0.0;
  double mean_weight = 0.0;
};

/// Offline batch. Columns are samples.
template <typename Scalar>
struct IqlBatch {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector done;
};

/// Implicit Q-learning on top of a policy network whose hidden activation
/// after `tap_layer` layers serves as the state embedding. Value networks
/// consume the embedding detached: their updates never touch the policy.
template <typename Scalar>
class IqlLearner {
 public:
  using Net = Mlp<Scalar>;
  using Matrix = typename Net::Matrix;
  using Vector = typename Net::Vector;

  IqlLearner(Net& policy, int tap_layer, std::vector<int> hidden, const IqlConfig& config,
             std::uint64_t seed)
      : policy_(policy), tap_(tap_layer), config_(config) {
    if (tap_layer < 1 || tap_layer >= policy.layers()) throw ParameterError("bad tap layer");
    const int embed = policy.dims()[tap_layer];
    const int act = policy.output_dim();
    std::vector<int> qd{embed + act};
    std::vector<int> vd{embed};
    for (int h : hidden) {
      qd.push_back(h);
      vd.push_back(h);
    }
    qd.push_back(1);
    vd.push_back(1);
    q_ = Net(qd);
    v_ = Net(vd);
    q_.Init(seed ^ 0x51ULL);
    v_.Init(seed ^ 0x52ULL);
    q_target_ = q_;
    for (auto* opt : {&policy_opt_, &q_opt_, &v_opt_}) opt->lr = config.lr;
  }

  Net& q() { return q_; }
  Net& v() { return v_; }
  Net& q_target() { return q_target_; }
  const Net& q() const { return q_; }
  const Net& v() const { return v_; }
  const Net& q_target() const { return q_target_; }
  Adam<Scalar>& policy_optimizer() { return policy_opt_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const IqlConfig& config() const { return config_; }

  Matrix Embed(const Matrix& states) const { return policy_.Forward(states, nullptr, tap_); }

  static Matrix Join(const Matrix& emb, const Matrix& actions) {
    Matrix sa(emb.rows() + actions.rows(), emb.cols());
    sa << emb, actions;
    return sa;
  }

  /// Clipped advantage weights exp(beta * (Q - V)).
  Vector Weights(const Matrix& emb, const Matrix& actions) const {
    const Matrix qv = q_.Forward(Join(emb, actions));
    const Matrix vv = v_.Forward(emb);
    Vector w(emb.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double adv = static_cast<double>(qv(0, i) - vv(0, i));
      w(i) = static_cast<Scalar>(std::min(std::exp(config_.beta * adv), config_.adv_clip));
    }
    return w;
  }

  IqlLosses Update(const IqlBatch<Scalar>& batch) {
    const Eigen::Index n = batch.states.cols();
    if (n == 0 || batch.actions.cols() != n || batch.rewards.size() != n ||
        batch.next_states.cols() != n || batch.done.size() != n) {
      throw ParameterError("inconsistent IQL batch");
    }
    IqlLosses out;
    typename Net::Tape policy_tape;
    const Matrix pred = policy_.Forward(batch.states, &policy_tape);
    const Matrix emb = policy_tape.h[tap_];
    const Matrix emb_next = Embed(batch.next_states);
    const Matrix sa = Join(emb, batch.actions);
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    const Scalar tau = static_cast<Scalar>(config_.expectile);

    // V: expectile regression toward the target critic.
    {
      const Matrix qt = q_target_.Forward(sa);
      typename Net::Tape tape;
      const Matrix vv = v_.Forward(emb, &tape);
      Matrix dv(1, n);
      double loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar u = qt(0, i) - vv(0, i);
        loss += static_cast<double>(ExpectileLoss(u, tau));
        dv(0, i) = -ExpectileGrad(u, tau) * inv_n;
      }
      out.v = loss / static_cast<double>(n);
      Vector grad = Vector::Zero(v_.num_params());
      v_.Backward(tape, dv, grad);
      v_opt_.Step(v_.params(), grad);
    }
    // Q: TD regression against the updated V.
    {
      const Matrix vn = v_.Forward(emb_next);
      typename Net::Tape tape;
      const Matrix qv = q_.Forward(sa, &tape);
      Matrix dq(1, n);
      double loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar y = batch.rewards(i) +
                         static_cast<Scalar>(config_.gamma) * (Scalar(1) - batch.done(i)) * vn(0, i);
        const Scalar diff = qv(0, i) - y;
        loss += static_cast<double>(diff * diff);
        dq(0, i) = Scalar(2) * diff * inv_n;
      }
      out.q = loss / static_cast<double>(n);
      Vector grad = Vector::Zero(q_.num_params());
      q_.Backward(tape, dq, grad);
      q_opt_.Step(q_.params(), grad);
    }
    // Policy: advantage-weighted regression.
    {
      const Vector w = Weights(emb, batch.actions);
      out.mean_weight = static_cast<double>(w.mean());
      Matrix dpred;
      out.policy = static_cast<double>(WeightedRegression(pred, batch.actions, w, &dpred));
      if (!std::isfinite(out.v) || !std::isfinite(out.q) || !std::isfinite(out.policy)) {
        std::ostringstream msg;
        msg << "non-finite IQL loss at step " << steps_ << ": v=" << out.v << " q=" << out.q
            << " policy=" << out.policy << " mean_weight=" << out.mean_weight;
        throw NumericalError(msg.str());
      }
      Vector grad = Vector::Zero(policy_.num_params());
      policy_.Backward(policy_tape, dpred, grad);
      policy_opt_.Step(policy_.params(), grad);
    }
    ++steps_;
    if (config_.target_copy_every > 0 && steps_ % config_.target_copy_every == 0) {
      q_target_ = q_;
    }
    return out;
  }

 private:
  Net& policy_;
  int tap_;
  IqlConfig config_;
  Net q_;
  Net v_;
  Net q_target_;
  Adam<Scalar> policy_opt_;
  Adam<Scalar> q_opt_;
  Adam<Scalar> v_opt_;
  std::int64_t steps_ = 0;
};

/// Plain behavior-cloning step, mean ||pred - a||^2, one optimizer step.
template <typename Scalar>
double BehaviorCloningStep(Mlp<Scalar>& policy, Adam<Scalar>& opt,
                           const typename Mlp<Scalar>::Matrix& states,
                           const typename Mlp<Scalar>::Matrix& actions) {
  using Net = Mlp<Scalar>;
  typename Net::Tape tape;
  const typename Net::Matrix pred = policy.Forward(states, &tape);
  typename Net::Matrix dpred;
  const typename Net::Vector ones = Net::Vector::Ones(states.cols());
  const double loss = static_cast<double>(WeightedRegression(pred, actions, ones, &dpred));
  typename Net::Vector grad = Net::Vector::Zero(policy.num_params());
  policy.Backward(tape, dpred, grad);
  opt.Step(policy.params(), grad);
  return loss;
}

/// One supervised step on the per-element trajectory MSE.
template <typename Scalar>
double SftStep(Mlp<Scalar>& policy, Adam<Scalar>& opt, const typename Mlp<Scalar>::Matrix& states,
               const typename Mlp<Scalar>::Matrix& targets) {
  using Net = Mlp<Scalar>;
  typename Net::Tape tape;
  const typename Net::Matrix pred = policy.Forward(states, &tape);
  typename Net::Matrix dpred;
  const double loss = static_cast<double>(TrajectoryMse(pred, targets, &dpred));
  typename Net::Vector grad = Net::Vector::Zero(policy.num_params());
  policy.Backward(tape, dpred, grad);
  opt.Step(policy.params(), grad);
  return loss;
}

}  // namespace urbannav
