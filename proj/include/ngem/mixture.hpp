#pragma once

#include <Eigen/Dense>
#include <utility>

// Diagonal-Gaussian mixture heads: the map from raw network outputs to
// mixture parameters, the three training losses (nll / sgem / ngem), their
// shared distribution-space gradient, and the Fisher preconditioners that
// turn that gradient into a natural gradient.
//
// Shapes are batch-major: logits B x K, means/scales B x (K*Dy) with column
// k*Dy + d holding dimension d of component k.

namespace ngem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Scales are parameterized as softplus(raw) + kSigmaMin, keeping them
// strictly positive and bounded away from zero.
inline constexpr double kSigmaMin = 1e-6;
// Mixture weights are floored at this value wherever they appear in a
// denominator, bounding rho/pi ratios by 1e6.
inline constexpr double kWeightFloor = 1e-6;

struct MixtureParams {
  MatrixXd logits;  // B x K
  MatrixXd means;   // B x K*Dy
  MatrixXd scales;  // B x K*Dy
  int components = 0;
  int target_dim = 0;

  Eigen::Index batch() const { return logits.rows(); }
  MatrixXd log_weights() const;  // row-wise log-softmax of logits
  MatrixXd weights() const;
};

// Per-sample posterior assignment probabilities, B x K rows summing to 1.
struct Responsibilities {
  MatrixXd rho;
};

// Gradient of a loss w.r.t. the per-sample distribution parameters.
// Entries are per-sample (no 1/B); the batch mean is taken when the gradient
// is chained into shared parameters.
struct DistGradients {
  MatrixXd d_logits;  // B x K
  MatrixXd d_means;   // B x K*Dy
  MatrixXd d_scales;  // B x K*Dy
  bool preconditioned = false;
};

// Two interchangeable forms of the preconditioned mixture-weight gradient.
// Both follow from the pseudo-inverse of the categorical Fisher matrix and
// differ only along the all-ones logit direction, which softmax ignores;
// Analytic is the closed form 1 - rho/pi, Reference reproduces the
// per-component weighting used by the reference training loss.
enum class CategoricalMode { Analytic, Reference };

// Splits raw head output (B x (K + 2*K*Dy)) into mixture parameters:
// logits pass through, means pass through, scales = softplus(raw) + kSigmaMin.
MixtureParams head_transform(const MatrixXd& raw, int components, int target_dim);

// Chains distribution-parameter gradients back onto the raw head output.
// The softplus derivative is recovered from the stored scales, so no raw
// pre-activations need to be kept.
MatrixXd head_backward(const MixtureParams& params, const DistGradients& grads);

// log N(y | mean, diag(scale^2)) for one component/sample.
double gaussian_log_prob(const VectorXd& mean, const VectorXd& scale, const VectorXd& y);

// Per-component log-densities log N_k(y_b), B x K.
MatrixXd component_log_probs(const MixtureParams& params, const MatrixXd& y);

// log p(y_b) = logsumexp_k(log pi_k + log N_k), length B.
VectorXd log_mixture_density(const MixtureParams& params, const MatrixXd& y);

// rho_bk = softmax_k(log pi_k + log N_k(y_b)).
Responsibilities responsibilities(const MixtureParams& params, const MatrixXd& y);

// Batch-mean losses.  All three share dist_gradients() as their gradient:
// with responsibilities treated as constants, the complete-data objectives
// have the same derivative as the marginal likelihood at that point.
double nll_loss(const MixtureParams& params, const MatrixXd& y);
double sgem_loss(const MixtureParams& params, const Responsibilities& resp, const MatrixXd& y);
// Same value as sgem_loss, regrouped as cross-entropy H(rho, pi) plus the
// rho-weighted Gaussian term; this is the form the preconditioners act on.
double ngem_loss(const MixtureParams& params, const Responsibilities& resp, const MatrixXd& y);

// Per-sample gradient of the losses above w.r.t. (logits, means, scales):
//   d_logits = pi - rho
//   d_means  = rho_k * (mean - y) / scale^2
//   d_scales = rho_k * (1/scale - (y - mean)^2 / scale^3)
DistGradients dist_gradients(const MixtureParams& params, const Responsibilities& resp,
                             const MatrixXd& y);

// Applies the inverse diagonal Gaussian Fisher block of one component, scaled
// by its mixture weight: d_mean * scale^2 / pi_k and d_scale * scale^2 / (2 pi_k).
std::pair<VectorXd, VectorXd> precondition_gaussian(const VectorXd& d_mean,
                                                    const VectorXd& d_scale,
                                                    const VectorXd& scale, double weight);

// Applies the pseudo-inverse categorical Fisher block to d_logits rows of the
// form pi - rho.  Analytic: 1 - rho/pi.  Reference: -rho_j/pi_j + pi_j * sum_k rho_k/pi_k.
MatrixXd precondition_categorical(const MatrixXd& rho, const MatrixXd& pi, CategoricalMode mode);

// Full natural gradient: dist_gradients() run through both preconditioners,
// per sample; returned with preconditioned = true.
DistGradients natural_gradient(const MixtureParams& params, const Responsibilities& resp,
                               const MatrixXd& y, CategoricalMode mode);

}  // namespace ngem
