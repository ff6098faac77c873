#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ngem/optim.hpp"
#include "ngem/rng.hpp"

using namespace ngem;

TEST_CASE("sgd subtracts the scaled gradient") {
  VectorXd p(3), g(3);
  p << 1.0, 2.0, 3.0;
  g << 0.5, -1.0, 0.0;
  OptimizerState s = OptimizerState::sgd(0.1);
  sgd_step(p, g, s);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(p[2] == 3.0);
  CHECK_THROWS_AS(sgd_step(p, VectorXd::Zero(2), s), std::invalid_argument);
}

TEST_CASE("two sgd half-steps equal one full step on a constant gradient") {
  VectorXd a = VectorXd::Constant(4, 1.0), b = a, g(4);
  g << 0.3, -0.7, 2.0, 0.0;
  OptimizerState full = OptimizerState::sgd(0.2), half = OptimizerState::sgd(0.1);
  sgd_step(a, g, full);
  sgd_step(b, g, half);
  sgd_step(b, g, half);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("first adam step has magnitude ~ learning rate at any gradient scale") {
  for (double scale : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
    VectorXd p = VectorXd::Zero(1), g(1);
    g << scale;
    OptimizerState s = OptimizerState::adam(0.01, 1);
    adam_step(p, g, s);
    // m_hat / (sqrt(v_hat) + eps) = g / (|g| + 1e-8), within eps of sign(g)
    CHECK(std::abs(p[0]) == doctest::Approx(0.01).epsilon(2e-2));
    CHECK(p[0] < 0.0);  // moves against the gradient
  }
}

TEST_CASE("adam matches an independent scalar reference over many steps") {
  // hand-rolled reference implementation, scalar, textbook form
  double theta_ref = 0.5, m = 0.0, v = 0.0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  VectorXd theta(1);
  theta << 0.5;
  OptimizerState s = OptimizerState::adam(lr, 1);

  Rng rng(17);
  for (int t = 1; t <= 50; ++t) {
    const double g = rng.uniform(-2.0, 2.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = v / (1 - std::pow(b2, t));
    theta_ref -= lr * m_hat / (std::sqrt(v_hat) + eps);

    VectorXd gv(1);
    gv << g;
    adam_step(theta, gv, s);
    CHECK(theta[0] == doctest::Approx(theta_ref).epsilon(1e-13));
  }
  CHECK(s.step_count == 50);
}

TEST_CASE("adam state must match the parameter size") {
  VectorXd p = VectorXd::Zero(3);
  OptimizerState s = OptimizerState::adam(0.01, 2);
  CHECK_THROWS_AS(adam_step(p, VectorXd::Zero(3), s), std::invalid_argument);
}

TEST_CASE("optimizer_step dispatches on the configured kind") {
  VectorXd p1 = VectorXd::Ones(2), p2 = VectorXd::Ones(2);
  const VectorXd g = VectorXd::Constant(2, 1.0);
  OptimizerState sgd = OptimizerState::sgd(0.5);
  OptimizerState adam = OptimizerState::adam(0.5, 2);
  optimizer_step(p1, g, sgd);
  optimizer_step(p2, g, adam);
  CHECK(p1[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p2[0] == doctest::Approx(0.5).epsilon(1e-6));  // first adam step ~ lr
  CHECK(adam.step_count == 1);
  CHECK(sgd.step_count == 0);
}
