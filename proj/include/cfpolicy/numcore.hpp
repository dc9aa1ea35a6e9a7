#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfpolicy/rng.hpp"

namespace cfpolicy::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Trainable parameter: value and accumulated gradient of equal shape.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  std::vector<Eigen::Index> shape() const { return {value.rows(), value.cols()}; }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamRefs = std::vector<ParamTensor*>;

enum class Mode { train, eval };
enum class Activation { relu };
enum class Head { linear, softmax };

std::string to_string(Head head);
Head parse_head(const std::string& text);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
void init_fan_in(ParamTensor& param, int fan_in, Rng& rng);

class Dense {
 public:
  Dense() = default;
  Dense(int in, int out);  // zero parameters
  Dense(int in, int out, Rng& rng);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);
  ParamRefs params() { return {&weight, &bias}; }

  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }

  ParamTensor weight;  // out x in
  ParamTensor bias;    // 1 x out

 private:
  Matrix input_;
};

// Running statistics follow running = momentum * running + (1 - momentum) * batch;
// batch variance is the population (biased) variance.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int width);

  Matrix forward(const Matrix& x, Mode mode);
  Matrix backward(const Matrix& dy);
  ParamRefs params() { return {&gamma, &beta}; }

  ParamTensor gamma;
  ParamTensor beta;
  Eigen::RowVectorXd running_mean;
  Eigen::RowVectorXd running_var;
  double momentum = 0.9;
  double eps = 1e-5;

 private:
  Matrix normalized_;
  Eigen::RowVectorXd inv_std_;
  Mode last_mode_ = Mode::eval;
};

struct MlpSpec {
  int input = 1;
  std::vector<int> hidden;
  int output = 1;
  Activation activation = Activation::relu;
  bool batch_norm = false;
  Head head = Head::linear;

  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

// Dense -> [BatchNorm] -> ReLU per hidden layer, then a dense output layer.
// forward returns raw outputs; for a softmax head those are the logits.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, std::uint64_t seed);

  Matrix forward(const Matrix& x, Mode mode);
  // Accumulates parameter gradients; returns d(loss)/d(input).
  Matrix backward(const Matrix& dout);

  ParamRefs params();
  void zero_grad();
  const MlpSpec& spec() const { return spec_; }
  int input_width() const { return spec_.input; }
  int output_width() const { return spec_.output; }

  std::vector<Dense>& dense_layers() { return dense_; }
  const std::vector<Dense>& dense_layers() const { return dense_; }
  std::vector<BatchNorm>& norm_layers() { return norms_; }
  const std::vector<BatchNorm>& norm_layers() const { return norms_; }

 private:
  MlpSpec spec_;
  std::vector<Dense> dense_;
  std::vector<BatchNorm> norms_;
  std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> masks_;
};

// 4-gate (input, forget, cell, output) recurrent cell unrolled over a
// fixed-length window, zero initial state.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(int input, int hidden);  // zero parameters
  LstmCell(int input, int hidden, Rng& rng);

  // steps[k] is batch x input, oldest first; returns the final hidden state.
  Matrix forward(const std::vector<Matrix>& steps);
  // Returns d(loss)/d(steps[k]).
  std::vector<Matrix> backward(const Matrix& dh_final);
  ParamRefs params() { return {&w_input, &w_hidden, &bias}; }

  int input() const { return static_cast<int>(w_input.value.cols()); }
  int hidden() const { return static_cast<int>(w_hidden.value.cols()); }

  ParamTensor w_input;   // 4H x I
  ParamTensor w_hidden;  // 4H x H
  ParamTensor bias;      // 1 x 4H

 private:
  struct StepCache {
    Matrix x, h_prev, c_prev, i, f, g, o, c;
  };
  std::vector<StepCache> cache_;
};

// Recurrent cell followed by a linear output head.
class RecurrentRegressor {
 public:
  RecurrentRegressor() = default;
  RecurrentRegressor(int input, int hidden, int output);  // zero parameters
  RecurrentRegressor(int input, int hidden, int output, std::uint64_t seed);

  Matrix forward(const std::vector<Matrix>& steps);
  std::vector<Matrix> backward(const Matrix& dout);
  ParamRefs params();
  void zero_grad();

  LstmCell cell;
  Dense head;
};

Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d(value)/d(prediction)
};

// sqrt(mean over rows of the squared Euclidean row error).
LossResult rmse_loss(const Matrix& pred, const Matrix& target);
// Mean over elements of the squared error.
LossResult mse_loss(const Matrix& pred, const Matrix& target);
// Mean over rows of -log softmax(logits)[label].
LossResult nll_loss(const Matrix& logits, std::span<const int> labels);

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment update with bias correction (or plain SGD). Throws
// TrainingDivergenceError on a non-finite gradient before touching anything.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});
  Optimizer(ParamRefs params, OptimizerConfig config);

  // Steps the bound parameters.
  void step();
  // Steps `params`; moment state is matched to them by position.
  void step(const ParamRefs& params);
  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  const OptimizerConfig& config() const { return config_; }

 private:
  ParamRefs params_;
  OptimizerConfig config_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  long steps_ = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central finite differences over every parameter entry. `loss` recomputes the
// scalar from the current values; `analytic` must fill each param's grad.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport check_gradients(const ParamRefs& params, const std::function<double()>& loss,
                                const std::function<void()>& analytic, double h = 1e-4, double floor = 1e-6);

bool all_finite(const ParamRefs& params);

}  // namespace cfpolicy::nn
