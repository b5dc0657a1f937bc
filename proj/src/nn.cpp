#include "contractgen/nn.hpp"

#include <cmath>
#include <string>

namespace contractgen::nn {

namespace {

void activate(Activation act, const Matrix& pre, Matrix& out) {
  if (act == Activation::identity) {
    out = pre;
    return;
  }
  out.resize(pre.rows(), pre.cols());
  out.array() = pre.array() / (1.0 + (-pre.array()).exp());
}

// grad *= act'(pre)
void activate_backward(Activation act, const Matrix& pre, Matrix& grad) {
  if (act == Activation::identity) return;
  const Eigen::ArrayXXd s = (1.0 + (-pre.array()).exp()).inverse();
  grad.array() *= s * (1.0 + pre.array() * (1.0 - s));
}

}  // namespace

void MlpGrads::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

Vector MlpGrads::flatten() const {
  Eigen::Index total = 0;
  for (size_t i = 0; i < weight.size(); ++i) total += weight[i].size() + bias[i].size();
  Vector flat(total);
  Eigen::Index at = 0;
  for (size_t i = 0; i < weight.size(); ++i) {
    for (Eigen::Index r = 0; r < weight[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < weight[i].cols(); ++c) flat[at++] = weight[i](r, c);
    }
    flat.segment(at, bias[i].size()) = bias[i];
    at += bias[i].size();
  }
  return flat;
}

Mlp::Mlp(const std::vector<int>& sizes, Activation hidden, Rng& rng) : hidden_(hidden) {
  if (sizes.size() < 2) throw ShapeError("mlp needs at least input and output sizes");
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i], out = sizes[i + 1];
    if (in < 1 || out < 1) throw ShapeError("mlp layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = uni(rng);
    }
    for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = uni(rng);
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers, Activation hidden)
    : layers_(std::move(layers)), hidden_(hidden) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].bias.size() != layers_[i].weight.rows()) throw ShapeError("bias/weight mismatch");
    if (i > 0 && layers_[i].weight.cols() != layers_[i - 1].weight.rows()) {
      throw ShapeError("consecutive layer sizes do not chain");
    }
  }
}

int Mlp::input_size() const { return static_cast<int>(layers_.front().weight.cols()); }
int Mlp::output_size() const { return static_cast<int>(layers_.back().weight.rows()); }

Matrix Mlp::forward(const Matrix& x) const {
  MlpCache scratch;
  return forward(x, scratch);
}

Matrix Mlp::forward(const Matrix& x, MlpCache& cache) const {
  if (x.rows() != input_size()) {
    throw ShapeError("mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(input_size()));
  }
  cache.inputs.resize(layers_.size());
  cache.pre.resize(layers_.size());
  Matrix h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    cache.inputs[i] = std::move(h);
    Matrix& pre = cache.pre[i];
    pre.noalias() = layers_[i].weight * cache.inputs[i];
    pre.colwise() += layers_[i].bias;
    const bool last = i + 1 == layers_.size();
    activate(last ? Activation::identity : hidden_, pre, h);
  }
  return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& grad_out, MlpGrads* grads) const {
  if (cache.pre.size() != layers_.size()) throw ShapeError("cache does not match network");
  if (grad_out.rows() != output_size() || grad_out.cols() != cache.pre.back().cols()) {
    throw ShapeError("output gradient shape mismatch");
  }
  Matrix g = grad_out;
  for (size_t idx = layers_.size(); idx-- > 0;) {
    const bool last = idx + 1 == layers_.size();
    activate_backward(last ? Activation::identity : hidden_, cache.pre[idx], g);
    if (grads != nullptr) {
      grads->weight[idx].noalias() += g * cache.inputs[idx].transpose();
      grads->bias[idx] += g.rowwise().sum();
    }
    Matrix next;
    next.noalias() = layers_[idx].weight.transpose() * g;
    g = std::move(next);
  }
  return g;
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads grads;
  for (const auto& layer : layers_) {
    grads.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    grads.bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return grads;
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index total = 0;
  for (const auto& layer : layers_) total += layer.weight.size() + layer.bias.size();
  return total;
}

Vector Mlp::flat_parameters() const {
  MlpGrads view;
  for (const auto& layer : layers_) {
    view.weight.push_back(layer.weight);
    view.bias.push_back(layer.bias);
  }
  return view.flatten();
}

void Mlp::set_flat_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw ShapeError("flat parameter size mismatch");
  Eigen::Index at = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat[at++];
    }
    layer.bias = flat.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
}

double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mse operands differ in shape");
  }
  const Matrix diff = pred - target;
  const double count = static_cast<double>(diff.size());
  if (grad != nullptr) *grad = (2.0 / count) * diff;
  return diff.squaredNorm() / count;
}

Vector sinusoidal_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ShapeError("embedding dim must be even and >= 2");
  const int half = dim / 2;
  Vector out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq =
        half == 1 ? 1.0 : std::exp(-std::log(10000.0) * i / static_cast<double>(half - 1));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void sgd_step(Vector& params, const Vector& grad, double lr) {
  if (params.size() != grad.size()) throw ShapeError("gradient size mismatch");
  params -= lr * grad;
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::step(Vector& params, const Vector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeError("adam state size mismatch");
  }
  if (!grad.allFinite()) throw NumericError("non-finite gradient");
  ++step_count_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void Adam::step(Mlp& net, const MlpGrads& grads) {
  Vector flat = net.flat_parameters();
  step(flat, grads.flatten());
  net.set_flat_parameters(flat);
}

}  // namespace contractgen::nn
