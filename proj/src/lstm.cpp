#include <cmath>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/numcore.hpp"

namespace cfpolicy::nn {

namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

LstmCell::LstmCell(int input, int hidden)
    : w_input("w_input", 4 * hidden, input), w_hidden("w_hidden", 4 * hidden, hidden), bias("bias", 1, 4 * hidden) {
  if (input <= 0 || hidden <= 0) throw ShapeError("recurrent cell widths must be positive");
}

LstmCell::LstmCell(int input, int hidden, Rng& rng) : LstmCell(input, hidden) {
  init_fan_in(w_input, hidden, rng);
  init_fan_in(w_hidden, hidden, rng);
  init_fan_in(bias, hidden, rng);
}

Matrix LstmCell::forward(const std::vector<Matrix>& steps) {
  if (steps.empty()) throw ShapeError("recurrent cell needs at least one step");
  const Eigen::Index batch = steps.front().rows();
  const Eigen::Index H = hidden();
  for (const auto& x : steps)
    if (x.rows() != batch || x.cols() != input())
      throw ShapeError("recurrent step expects " + std::to_string(input()) + " columns, got " + std::to_string(x.cols()));

  cache_.clear();
  Matrix h = Matrix::Zero(batch, H);
  Matrix c = Matrix::Zero(batch, H);
  for (const auto& x : steps) {
    Matrix a = x * w_input.value.transpose() + h * w_hidden.value.transpose();
    a.rowwise() += bias.value.row(0);
    StepCache s;
    s.x = x;
    s.h_prev = h;
    s.c_prev = c;
    s.i = sigmoid(a.middleCols(0, H));
    s.f = sigmoid(a.middleCols(H, H));
    s.g = a.middleCols(2 * H, H).array().tanh().matrix();
    s.o = sigmoid(a.middleCols(3 * H, H));
    c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
    h = s.o.cwiseProduct(Matrix(c.array().tanh()));
    s.c = c;
    cache_.push_back(std::move(s));
  }
  return h;
}

std::vector<Matrix> LstmCell::backward(const Matrix& dh_final) {
  const Eigen::Index H = hidden();
  std::vector<Matrix> dx(cache_.size());
  Matrix dh = dh_final;
  Matrix dc = Matrix::Zero(dh.rows(), H);
  for (std::size_t k = cache_.size(); k-- > 0;) {
    const auto& s = cache_[k];
    const Eigen::ArrayXXd tc = s.c.array().tanh();
    const Eigen::ArrayXXd d_o = dh.array() * tc;
    dc.array() += dh.array() * s.o.array() * (1.0 - tc.square());
    Matrix da(dh.rows(), 4 * H);
    da.middleCols(0, H) = (dc.array() * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    da.middleCols(H, H) = (dc.array() * s.c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    da.middleCols(2 * H, H) = (dc.array() * s.i.array() * (1.0 - s.g.array().square())).matrix();
    da.middleCols(3 * H, H) = (d_o * s.o.array() * (1.0 - s.o.array())).matrix();
    w_input.grad.noalias() += da.transpose() * s.x;
    w_hidden.grad.noalias() += da.transpose() * s.h_prev;
    bias.grad.row(0) += da.colwise().sum();
    dx[k] = da * w_input.value;
    dh = da * w_hidden.value;
    dc = dc.cwiseProduct(s.f);
  }
  return dx;
}

// ---------------------------------------------------------------------------

RecurrentRegressor::RecurrentRegressor(int input, int hidden, int output) : cell(input, hidden), head(hidden, output) {}

RecurrentRegressor::RecurrentRegressor(int input, int hidden, int output, std::uint64_t seed) {
  Rng rng(seed);
  cell = LstmCell(input, hidden, rng);
  head = Dense(hidden, output, rng);
}

Matrix RecurrentRegressor::forward(const std::vector<Matrix>& steps) { return head.forward(cell.forward(steps)); }

std::vector<Matrix> RecurrentRegressor::backward(const Matrix& dout) { return cell.backward(head.backward(dout)); }

ParamRefs RecurrentRegressor::params() {
  ParamRefs out = cell.params();
  for (auto* p : head.params()) out.push_back(p);
  return out;
}

void RecurrentRegressor::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

}  // namespace cfpolicy::nn
