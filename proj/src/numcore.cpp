#include "cfpolicy/numcore.hpp"

#include <cmath>

#include "cfpolicy/errors.hpp"

namespace cfpolicy::nn {

std::string to_string(Head head) { return head == Head::softmax ? "softmax" : "linear"; }

Head parse_head(const std::string& text) {
  if (text == "linear") return Head::linear;
  if (text == "softmax") return Head::softmax;
  throw ConfigError("unknown output head '" + text + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + text + "'");
}

void init_fan_in(ParamTensor& param, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index c = 0; c < param.value.cols(); ++c)
    for (Eigen::Index r = 0; r < param.value.rows(); ++r) param.value(r, c) = rng.uniform(-bound, bound);
  param.zero_grad();
}

// ---------------------------------------------------------------------------

Dense::Dense(int in, int out) : weight("weight", out, in), bias("bias", 1, out) {}

Dense::Dense(int in, int out, Rng& rng) : Dense(in, out) {
  init_fan_in(weight, in, rng);
  init_fan_in(bias, in, rng);
}

Matrix Dense::forward(const Matrix& x) {
  if (x.cols() != weight.value.cols())
    throw ShapeError("dense layer expects width " + std::to_string(weight.value.cols()) + ", got " +
                     std::to_string(x.cols()));
  input_ = x;
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * input_;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int width)
    : gamma("gamma", 1, width),
      beta("beta", 1, width),
      running_mean(Eigen::RowVectorXd::Zero(width)),
      running_var(Eigen::RowVectorXd::Ones(width)) {
  gamma.value.setOnes();
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode) {
  if (x.cols() != gamma.value.cols()) throw ShapeError("batch-norm width mismatch");
  last_mode_ = mode;
  Eigen::RowVectorXd mean, var;
  if (mode == Mode::train) {
    const double n = static_cast<double>(x.rows());
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().sum().matrix() / n;
    running_mean = momentum * running_mean + (1.0 - momentum) * mean;
    running_var = momentum * running_var + (1.0 - momentum) * var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  inv_std_ = (var.array() + eps).rsqrt().matrix();
  normalized_ = (x.rowwise() - mean).array().rowwise() * inv_std_.array();
  Matrix y = normalized_.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  return y;
}

Matrix BatchNorm::backward(const Matrix& dy) {
  gamma.grad.row(0) += (dy.array() * normalized_.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  if (last_mode_ == Mode::eval) return dxhat.array().rowwise() * inv_std_.array();
  const double n = static_cast<double>(dy.rows());
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * normalized_.array()).colwise().sum().matrix();
  Matrix dx = (n * dxhat).rowwise() - sum_dxhat;
  dx -= (normalized_.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().rowwise() * (inv_std_.array() / n)).matrix();
}

// ---------------------------------------------------------------------------

void MlpSpec::validate() const {
  if (input <= 0 || output <= 0) throw ShapeError("MLP widths must be positive");
  for (int w : hidden)
    if (w <= 0) throw ShapeError("MLP widths must be positive");
}

Mlp::Mlp(const MlpSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  int in = spec_.input;
  for (int w : spec_.hidden) {
    dense_.emplace_back(in, w, rng);
    if (spec_.batch_norm) norms_.emplace_back(w);
    in = w;
  }
  dense_.emplace_back(in, spec_.output, rng);
}

Matrix Mlp::forward(const Matrix& x, Mode mode) {
  if (x.cols() != spec_.input)
    throw ShapeError("network expects input width " + std::to_string(spec_.input) + ", got " + std::to_string(x.cols()));
  masks_.resize(spec_.hidden.size());
  Matrix h = x;
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    Matrix z = dense_[l].forward(h);
    if (spec_.batch_norm) z = norms_[l].forward(z, mode);
    masks_[l] = z.array() > 0.0;
    h = masks_[l].select(z, 0.0);
  }
  return dense_.back().forward(h);
}

Matrix Mlp::backward(const Matrix& dout) {
  Matrix d = dense_.back().backward(dout);
  for (std::size_t l = spec_.hidden.size(); l-- > 0;) {
    d = masks_[l].select(d, 0.0);
    if (spec_.batch_norm) d = norms_[l].backward(d);
    d = dense_[l].backward(d);
  }
  return d;
}

ParamRefs Mlp::params() {
  ParamRefs out;
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    for (auto* p : dense_[l].params()) out.push_back(p);
    if (spec_.batch_norm && l < norms_.size())
      for (auto* p : norms_[l].params()) out.push_back(p);
  }
  return out;
}

void Mlp::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

// ---------------------------------------------------------------------------

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    const double lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

LossResult rmse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.rows() == 0)
    throw ShapeError("rmse_loss: prediction and target shapes differ");
  const Matrix diff = pred - target;
  const double n = static_cast<double>(pred.rows());
  const double value = std::sqrt(diff.squaredNorm() / n);
  LossResult r;
  r.value = value;
  r.grad = value > 0.0 ? Matrix(diff / (n * value)) : Matrix::Zero(pred.rows(), pred.cols());
  return r;
}

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0)
    throw ShapeError("mse_loss: prediction and target shapes differ");
  const Matrix diff = pred - target;
  const double n = static_cast<double>(pred.size());
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

LossResult nll_loss(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.empty())
    throw ShapeError("nll_loss: label count differs from batch size");
  const Matrix logp = log_softmax_rows(logits);
  const double n = static_cast<double>(labels.size());
  LossResult r;
  r.grad = logp.array().exp();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw ShapeError("nll_loss: label out of range");
    total -= logp(i, y);
    r.grad(i, y) -= 1.0;
  }
  r.value = total / n;
  r.grad /= n;
  return r;
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

Optimizer::Optimizer(ParamRefs params, OptimizerConfig config) : Optimizer(config) { params_ = std::move(params); }

void Optimizer::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Optimizer::step() { step(params_); }

void Optimizer::step(const ParamRefs& params) {
  for (auto* p : params)
    if (!p->grad.allFinite()) throw TrainingDivergenceError("non-finite gradient in parameter '" + p->name + "'");
  if (first_.empty()) {
    for (auto* p : params) {
      first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (first_.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  ++steps_;
  if (config_.kind == OptimizerKind::sgd) {
    for (auto* p : params) p->value -= config_.lr * p->grad;
    return;
  }
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    first_[k] = config_.beta1 * first_[k] + (1.0 - config_.beta1) * p.grad;
    second_[k] = config_.beta2 * second_[k] + (1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= config_.lr * (first_[k].array() / c1) / ((second_[k].array() / c2).sqrt() + config_.eps);
  }
}

// ---------------------------------------------------------------------------

GradCheckReport check_gradients(const ParamRefs& params, const std::function<double()>& loss,
                                const std::function<void()>& analytic, double h, double floor) {
  for (auto* p : params) p->zero_grad();
  analytic();
  std::vector<Matrix> grads;
  for (auto* p : params) grads.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = params[k]->value;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double saved = v(r, c);
        v(r, c) = saved + h;
        const double up = loss();
        v(r, c) = saved - h;
        const double down = loss();
        v(r, c) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = grads[k](r, c);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        ++report.checked;
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = params[k]->name + "(" + std::to_string(r) + "," + std::to_string(c) + ")";
        }
      }
    }
  }
  return report;
}

bool all_finite(const ParamRefs& params) {
  for (const auto* p : params)
    if (!p->value.allFinite()) return false;
  return true;
}

}  // namespace cfpolicy::nn
