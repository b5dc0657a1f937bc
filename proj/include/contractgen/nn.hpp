#pragma once

#include <Eigen/Dense>
#include <vector>

#include "contractgen/env.hpp"

namespace contractgen::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Columns are samples, rows are features.

enum class Activation { identity, silu };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct MlpCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // affine output of each layer, before activation
};

struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero();
  Vector flatten() const;
};

// Fully connected stack: affine layers with `hidden` activation between them
// and a linear output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& sizes, Activation hidden, Rng& rng);
  Mlp(std::vector<DenseLayer> layers, Activation hidden);

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, MlpCache& cache) const;

  // Accumulates parameter gradients into `grads` (if non-null) and returns the
  // gradient with respect to the input.
  Matrix backward(const MlpCache& cache, const Matrix& grad_out, MlpGrads* grads) const;

  MlpGrads zero_grads() const;

  Eigen::Index parameter_count() const;
  // Layer by layer: weight in row-major order, then bias.
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  Activation activation() const { return hidden_; }
  int input_size() const;
  int output_size() const;

 private:
  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::silu;
};

// Mean over all entries of (pred - target)^2; writes d loss / d pred if asked.
double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad);

// [sin(t w_0), ..., sin(t w_{h-1}), cos(t w_0), ..., cos(t w_{h-1})], h = dim / 2.
Vector sinusoidal_embedding(int t, int dim);

bool all_finite(const Matrix& m);

void sgd_step(Vector& params, const Vector& grad, double lr);

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(Vector& params, const Vector& grad);
  void step(Mlp& net, const MlpGrads& grads);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long step_count_ = 0;
  Vector m_, v_;
};

}  // namespace contractgen::nn
