#include "ngem/mixture.hpp"

#include <cmath>
#include <stdexcept>

namespace ngem {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

void check_shapes(const MixtureParams& p, const MatrixXd& y) {
  const Eigen::Index b = p.logits.rows();
  if (p.logits.cols() != p.components || p.means.rows() != b || p.scales.rows() != b ||
      p.means.cols() != p.components * p.target_dim || p.scales.cols() != p.means.cols())
    throw std::invalid_argument("mixture: inconsistent parameter shapes");
  if (y.rows() != b || y.cols() != p.target_dim)
    throw std::invalid_argument("mixture: target shape does not match parameters");
}

// Row-wise logsumexp with the max subtracted; safe for large-magnitude logits.
VectorXd row_logsumexp(const MatrixXd& m) {
  VectorXd mx = m.rowwise().maxCoeff();
  return mx.array() + (m.colwise() - mx).array().exp().rowwise().sum().log();
}

// log pi_k + log N_k(y_b), the joint log-density over components, B x K.
MatrixXd joint_log_probs(const MixtureParams& p, const MatrixXd& y) {
  return p.log_weights() + component_log_probs(p, y);
}

}  // namespace

MatrixXd MixtureParams::log_weights() const {
  VectorXd lse = row_logsumexp(logits);
  return logits.colwise() - lse;
}

MatrixXd MixtureParams::weights() const { return log_weights().array().exp(); }

MixtureParams head_transform(const MatrixXd& raw, int components, int target_dim) {
  if (components < 1 || target_dim < 1)
    throw std::invalid_argument("mixture: components and target_dim must be >= 1");
  const int kd = components * target_dim;
  if (raw.cols() != components + 2 * kd)
    throw std::invalid_argument("mixture: raw head width does not match K/Dy");
  MixtureParams p;
  p.components = components;
  p.target_dim = target_dim;
  p.logits = raw.leftCols(components);
  p.means = raw.middleCols(components, kd);
  // softplus computed as max(x,0) + log1p(exp(-|x|)): exact and overflow-free.
  p.scales = raw.rightCols(kd).array().max(0.0) +
             (-raw.rightCols(kd).array().abs()).exp().log1p() + kSigmaMin;
  return p;
}

MatrixXd head_backward(const MixtureParams& params, const DistGradients& grads) {
  const Eigen::Index b = params.batch();
  const int kd = params.components * params.target_dim;
  if (grads.d_logits.rows() != b || grads.d_logits.cols() != params.components ||
      grads.d_means.rows() != b || grads.d_means.cols() != kd ||
      grads.d_scales.rows() != b || grads.d_scales.cols() != kd)
    throw std::invalid_argument("mixture: gradient shapes do not match parameters");
  MatrixXd d_raw(b, params.components + 2 * kd);
  d_raw.leftCols(params.components) = grads.d_logits;
  d_raw.middleCols(params.components, kd) = grads.d_means;
  // d scale/d raw = sigmoid(raw) = 1 - exp(-softplus(raw)), recovered from the
  // stored scale value without keeping raw around.
  d_raw.rightCols(kd) = grads.d_scales.array() *
                        (1.0 - (-(params.scales.array() - kSigmaMin)).exp());
  return d_raw;
}

double gaussian_log_prob(const VectorXd& mean, const VectorXd& scale, const VectorXd& y) {
  if (mean.size() != scale.size() || mean.size() != y.size())
    throw std::invalid_argument("mixture: gaussian_log_prob dimension mismatch");
  if ((scale.array() <= 0.0).any())
    throw std::invalid_argument("mixture: scales must be positive");
  const auto z = (y - mean).array() / scale.array();
  return -(0.5 * z.square() + scale.array().log() + kHalfLog2Pi).sum();
}

MatrixXd component_log_probs(const MixtureParams& p, const MatrixXd& y) {
  check_shapes(p, y);
  const Eigen::Index b = p.batch();
  MatrixXd out = MatrixXd::Constant(b, p.components, -p.target_dim * kHalfLog2Pi);
  for (int k = 0; k < p.components; ++k) {
    for (int d = 0; d < p.target_dim; ++d) {
      const int c = k * p.target_dim + d;
      const auto sd = p.scales.col(c).array();
      const auto z = (y.col(d).array() - p.means.col(c).array()) / sd;
      out.col(k).array() -= 0.5 * z.square() + sd.log();
    }
  }
  return out;
}

VectorXd log_mixture_density(const MixtureParams& p, const MatrixXd& y) {
  return row_logsumexp(joint_log_probs(p, y));
}

Responsibilities responsibilities(const MixtureParams& p, const MatrixXd& y) {
  MatrixXd joint = joint_log_probs(p, y);
  VectorXd lse = row_logsumexp(joint);
  return {(joint.colwise() - lse).array().exp()};
}

double nll_loss(const MixtureParams& p, const MatrixXd& y) {
  return -log_mixture_density(p, y).mean();
}

double sgem_loss(const MixtureParams& p, const Responsibilities& resp, const MatrixXd& y) {
  MatrixXd joint = joint_log_probs(p, y);
  if (resp.rho.rows() != joint.rows() || resp.rho.cols() != joint.cols())
    throw std::invalid_argument("mixture: responsibility shape mismatch");
  return -resp.rho.cwiseProduct(joint).sum() / static_cast<double>(p.batch());
}

double ngem_loss(const MixtureParams& p, const Responsibilities& resp, const MatrixXd& y) {
  if (resp.rho.rows() != p.batch() || resp.rho.cols() != p.components)
    throw std::invalid_argument("mixture: responsibility shape mismatch");
  const double cross_entropy =
      -resp.rho.cwiseProduct(p.log_weights()).sum() / static_cast<double>(p.batch());
  const double gaussian_term =
      -resp.rho.cwiseProduct(component_log_probs(p, y)).sum() / static_cast<double>(p.batch());
  return cross_entropy + gaussian_term;
}

DistGradients dist_gradients(const MixtureParams& p, const Responsibilities& resp,
                             const MatrixXd& y) {
  check_shapes(p, y);
  if (resp.rho.rows() != p.batch() || resp.rho.cols() != p.components)
    throw std::invalid_argument("mixture: responsibility shape mismatch");
  DistGradients g;
  g.d_logits = p.weights() - resp.rho;
  g.d_means.resize(p.batch(), p.means.cols());
  g.d_scales.resize(p.batch(), p.scales.cols());
  for (int k = 0; k < p.components; ++k) {
    const auto rho_k = resp.rho.col(k).array();
    for (int d = 0; d < p.target_dim; ++d) {
      const int c = k * p.target_dim + d;
      const auto sd = p.scales.col(c).array();
      const auto diff = p.means.col(c).array() - y.col(d).array();
      g.d_means.col(c) = rho_k * diff / sd.square();
      g.d_scales.col(c) = rho_k * (1.0 / sd - diff.square() / sd.cube());
    }
  }
  return g;
}

std::pair<VectorXd, VectorXd> precondition_gaussian(const VectorXd& d_mean,
                                                    const VectorXd& d_scale,
                                                    const VectorXd& scale, double weight) {
  if (d_mean.size() != scale.size() || d_scale.size() != scale.size())
    throw std::invalid_argument("mixture: precondition_gaussian dimension mismatch");
  const double inv_w = 1.0 / std::max(weight, kWeightFloor);
  VectorXd dm = d_mean.array() * scale.array().square() * inv_w;
  VectorXd ds = d_scale.array() * scale.array().square() * (0.5 * inv_w);
  return {std::move(dm), std::move(ds)};
}

MatrixXd precondition_categorical(const MatrixXd& rho, const MatrixXd& pi, CategoricalMode mode) {
  if (rho.rows() != pi.rows() || rho.cols() != pi.cols())
    throw std::invalid_argument("mixture: rho/pi shape mismatch");
  // Ratios rho/pi with pi floored, so each entry lies in [0, 1e6].
  MatrixXd ratio = rho.array() / pi.array().max(kWeightFloor);
  if (mode == CategoricalMode::Analytic) return (1.0 - ratio.array()).matrix();
  VectorXd total = ratio.rowwise().sum();
  return (pi.array().colwise() * total.array()) - ratio.array();
}

DistGradients natural_gradient(const MixtureParams& p, const Responsibilities& resp,
                               const MatrixXd& y, CategoricalMode mode) {
  DistGradients g = dist_gradients(p, resp, y);
  const MatrixXd pi = p.weights();
  g.d_logits = precondition_categorical(resp.rho, pi, mode);
  for (int k = 0; k < p.components; ++k) {
    const auto inv_w = 1.0 / pi.col(k).array().max(kWeightFloor);
    for (int d = 0; d < p.target_dim; ++d) {
      const int c = k * p.target_dim + d;
      const auto s2 = p.scales.col(c).array().square();
      g.d_means.col(c) = g.d_means.col(c).array() * s2 * inv_w;
      g.d_scales.col(c) = g.d_scales.col(c).array() * s2 * (0.5 * inv_w);
    }
  }
  g.preconditioned = true;
  return g;
}

}  // namespace ngem
