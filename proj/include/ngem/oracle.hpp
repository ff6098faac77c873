#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

// Independent verification machinery: finite differences and Monte-Carlo
// estimates of Fisher information matrices.  Everything in here re-derives
// results from first principles (its own log-density second derivatives, its
// own sampling) and deliberately calls nothing from the training modules, so
// agreement between the two is evidence rather than tautology.

namespace ngem::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A Monte-Carlo matrix estimate with per-entry standard errors of the mean.
// Entries whose per-sample statistic is constant come out with std_error 0.
struct McEstimate {
  MatrixXd value;
  MatrixXd std_error;
  std::int64_t n_samples = 0;
};

// Central-difference gradient of f at theta with step h (per coordinate).
VectorXd finite_diff_gradient(const std::function<double(const VectorXd&)>& f,
                              const VectorXd& theta, double h);

// Fisher information of a diagonal Gaussian in (mean, scale) coordinates,
// estimated as the sampled negative Hessian of the log-density.  Coordinate
// order: [mean_1..mean_D, scale_1..scale_D].  The exact value is
// diag(1/scale^2, 2/scale^2).
McEstimate mc_fisher_gaussian(const VectorXd& mean, const VectorXd& scale,
                              std::int64_t n_samples, std::uint64_t seed);

// Fisher information of a categorical distribution in logit coordinates.
// The log-density Hessian is constant in the sample, so the estimate is exact
// (std_error 0); the value is diag(weights) - weights*weights^T.
McEstimate mc_fisher_categorical(const VectorXd& weights, std::int64_t n_samples,
                                 std::uint64_t seed);

// A K-component diagonal-Gaussian mixture for the complete-data model below.
struct GmmSpec {
  VectorXd weights;  // K
  MatrixXd means;    // K x D
  MatrixXd scales;   // K x D
};

// Fisher information of the complete-data model p(k, x) = pi_k * N_k(x),
// coordinates [mean_1, scale_1, ..., mean_K, scale_K, logits] (size 2KD + K).
// The exact value is block-diagonal: pi_k * F_k per component plus the
// categorical block; all cross blocks vanish.
McEstimate mc_complete_fim(const GmmSpec& spec, std::int64_t n_samples, std::uint64_t seed);

// Moore-Penrose pseudo-inverse via SVD; singular values below
// tol * max_singular_value are treated as zero.
MatrixXd moore_penrose_pinv(const MatrixXd& m, double tol = 1e-12);

// Closed forms the Monte-Carlo estimates are checked against.
VectorXd gaussian_fim_diag(const VectorXd& scale);        // [1/s^2, 2/s^2]
MatrixXd categorical_fim(const VectorXd& weights);        // diag(w) - w w^T
// diag(w)^-1 - 1 1^T.  A reflexive generalized inverse of categorical_fim for
// any weights; it coincides with the full Moore-Penrose pseudo-inverse exactly
// when the weights are uniform.  On zero-sum vectors its action differs from
// the pseudo-inverse only along the all-ones direction.
MatrixXd categorical_fim_ginv(const VectorXd& weights);

}  // namespace ngem::oracle
