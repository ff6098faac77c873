#pragma once

#include <Eigen/Dense>
#include <cstdint>

// First-order parameter updates over flat parameter vectors.

namespace ngem {

using Eigen::VectorXd;

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 1e-3;
  // Adam accumulators; unused for plain SGD.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  VectorXd m;
  VectorXd v;

  static OptimizerState sgd(double learning_rate);
  static OptimizerState adam(double learning_rate, std::int64_t n_params);
};

// params -= learning_rate * grad
void sgd_step(VectorXd& params, const VectorXd& grad, const OptimizerState& state);

// Bias-corrected Adam update; advances state.step_count and the moments.
void adam_step(VectorXd& params, const VectorXd& grad, OptimizerState& state);

// Dispatch on state.kind.
void optimizer_step(VectorXd& params, const VectorXd& grad, OptimizerState& state);

}  // namespace ngem
