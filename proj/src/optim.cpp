#include "ngem/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ngem {
namespace {

void check_sizes(const VectorXd& params, const VectorXd& grad, const OptimizerState& state) {
  if (params.size() != grad.size())
    throw std::invalid_argument("optim: parameter/gradient size mismatch");
  if (state.kind == OptimizerKind::Adam &&
      (state.m.size() != params.size() || state.v.size() != params.size()))
    throw std::invalid_argument("optim: Adam state size mismatch");
}

}  // namespace

OptimizerState OptimizerState::sgd(double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::Sgd;
  s.learning_rate = learning_rate;
  return s;
}

OptimizerState OptimizerState::adam(double learning_rate, std::int64_t n_params) {
  OptimizerState s;
  s.kind = OptimizerKind::Adam;
  s.learning_rate = learning_rate;
  s.m = VectorXd::Zero(n_params);
  s.v = VectorXd::Zero(n_params);
  return s;
}

void sgd_step(VectorXd& params, const VectorXd& grad, const OptimizerState& state) {
  check_sizes(params, grad, state);
  params -= state.learning_rate * grad;
}

void adam_step(VectorXd& params, const VectorXd& grad, OptimizerState& state) {
  check_sizes(params, grad, state);
  state.step_count += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const double step = state.learning_rate / c1;
  params.array() -= step * state.m.array() / ((state.v.array() / c2).sqrt() + state.epsilon);
}

void optimizer_step(VectorXd& params, const VectorXd& grad, OptimizerState& state) {
  if (state.kind == OptimizerKind::Sgd)
    sgd_step(params, grad, state);
  else
    adam_step(params, grad, state);
}

}  // namespace ngem
