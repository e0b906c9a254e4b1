#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "urbannav/error.h"

namespace urbannav {

/// Fully connected network with softplus hidden layers and a linear output.
/// All weights live in one flat parameter vector; layer l stores its weight
/// matrix (column-major, out x in) followed by its bias.
template <typename Scalar_>
class Mlp {
 public:
  using Scalar = Scalar_;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Activations recorded by Forward for Backward. h[0] is the input,
  /// h[l + 1] the output of layer l; z[l] its pre-activation.
  struct Tape {
    std::vector<Matrix> z;
    std::vector<Matrix> h;
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw ParameterError("network needs at least two layer sizes");
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] <= 0 || dims_[l + 1] <= 0) throw ParameterError("layer sizes must be positive");
      offsets_.push_back(off);
      off += static_cast<Eigen::Index>(dims_[l + 1]) * (dims_[l] + 1);
    }
    params_ = Vector::Zero(off);
  }

  const std::vector<int>& dims() const { return dims_; }
  int layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Eigen::Index num_params() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> W(int l) { return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]}; }
  Eigen::Map<const Matrix> W(int l) const {
    return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  Eigen::Map<Vector> b(int l) { return {params_.data() + BiasOffset(l), dims_[l + 1]}; }
  Eigen::Map<const Vector> b(int l) const { return {params_.data() + BiasOffset(l), dims_[l + 1]}; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void Init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (int l = 0; l < layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      auto w = W(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(u(rng));
      }
      auto bias = b(l);
      for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = static_cast<Scalar>(u(rng));
    }
  }

  /// Batch forward pass, one sample per column. With `stop_after` = k the
  /// activation after the first k layers is returned instead.
  Matrix Forward(const Matrix& x, Tape* tape = nullptr, int stop_after = -1) const {
    if (x.rows() != input_dim()) throw ParameterError("network input has wrong dimension");
    const int last = stop_after < 0 ? layers() : stop_after;
    if (tape) {
      tape->z.assign(last, Matrix());
      tape->h.assign(last + 1, Matrix());
      tape->h[0] = x;
    }
    Matrix h = x;
    for (int l = 0; l < last; ++l) {
      Matrix z = W(l) * h;
      z.colwise() += b(l);
      if (l + 1 < layers()) {
        h = z.unaryExpr([](Scalar v) { return Softplus(v); });
      } else {
        h = z;
      }
      if (tape) {
        tape->z[l] = std::move(z);
        tape->h[l + 1] = h;
      }
    }
    return h;
  }

  /// Accumulates dL/dparams into `grad` given dL/d(output of the taped
  /// pass). Optionally returns dL/dx.
  void Backward(const Tape& tape, const Matrix& dout, Vector& grad, Matrix* dx = nullptr) const {
    if (grad.size() != num_params()) grad = Vector::Zero(num_params());
    const int last = static_cast<int>(tape.z.size());
    Matrix delta = dout;
    for (int l = last - 1; l >= 0; --l) {
      if (l + 1 < layers()) {
        delta.array() *= tape.z[l].unaryExpr([](Scalar v) { return Sigmoid(v); }).array();
      }
      Eigen::Map<Matrix>(grad.data() + offsets_[l], dims_[l + 1], dims_[l]).noalias() +=
          delta * tape.h[l].transpose();
      Eigen::Map<Vector>(grad.data() + BiasOffset(l), dims_[l + 1]) += delta.rowwise().sum();
      if (l > 0 || dx) {
        Matrix up = W(l).transpose() * delta;
        if (l == 0) {
          *dx = std::move(up);
        } else {
          delta = std::move(up);
        }
      }
    }
  }

  static Scalar Softplus(Scalar v) {
    if (v > Scalar(20)) return v;
    return std::log1p(std::exp(v));
  }
  static Scalar Sigmoid(Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); }

 private:
  Eigen::Index BiasOffset(int l) const {
    return offsets_[l] + static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l];
  }

  std::vector<int> dims_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

/// Adaptive-moment first-order optimizer with bias correction.
template <typename Scalar>
struct Adam {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m;
  Vector v;
  std::int64_t t = 0;

  void Step(Vector& params, const Vector& grad) {
    if (m.size() != params.size()) {
      m = Vector::Zero(params.size());
      v = Vector::Zero(params.size());
    }
    ++t;
    const Scalar b1 = static_cast<Scalar>(beta1);
    const Scalar b2 = static_cast<Scalar>(beta2);
    m = b1 * m + (Scalar(1) - b1) * grad;
    v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const Scalar step = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
    const Scalar e = static_cast<Scalar>(eps * std::sqrt(c2));
    params.array() -= step * m.array() / (v.array().sqrt() + e);
  }
};

}  // namespace urbannav
