#include "ngem/oracle.hpp"

#include <cmath>
#include <stdexcept>

#include "ngem/rng.hpp"

namespace ngem::oracle {
namespace {

// Accumulates per-entry sums and squared sums of a streamed matrix statistic
// and turns them into a mean and a standard error of that mean.
struct MatrixAccumulator {
  MatrixXd s1, s2;
  std::int64_t n = 0;

  explicit MatrixAccumulator(Eigen::Index rows, Eigen::Index cols)
      : s1(MatrixXd::Zero(rows, cols)), s2(MatrixXd::Zero(rows, cols)) {}

  void add(const MatrixXd& sample) {
    s1 += sample;
    s2 += sample.cwiseProduct(sample);
    n += 1;
  }

  McEstimate finish() const {
    if (n < 2) throw std::invalid_argument("oracle: need at least 2 samples");
    McEstimate e;
    e.n_samples = n;
    const double dn = static_cast<double>(n);
    e.value = s1 / dn;
    MatrixXd var = (s2 - s1.cwiseProduct(s1) / dn) / (dn - 1.0);
    e.std_error = var.cwiseMax(0.0).cwiseSqrt() / std::sqrt(dn);
    return e;
  }
};

int sample_category(const VectorXd& weights, double u) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size() - 1);
}

void check_weights(const VectorXd& w) {
  if (w.size() < 1 || (w.array() <= 0.0).any() || std::abs(w.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("oracle: weights must be positive and sum to 1");
}

// Writes the negative Hessian of log N(x | mean, diag(scale^2)) w.r.t.
// [mean, scale] into a (2D x 2D) block at (at, at).  Second derivatives of the
// log-density, dimension by dimension (it is separable):
//   d2/dmean2          = -1/s^2
//   d2/dmean dscale    = -2 (x - m) / s^3
//   d2/dscale2         =  1/s^2 - 3 (x - m)^2 / s^4
void add_neg_gaussian_hessian(MatrixXd& h, Eigen::Index at, const VectorXd& mean,
                              const VectorXd& scale, const VectorXd& x) {
  const Eigen::Index d = mean.size();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double s = scale[j];
    const double r = x[j] - mean[j];
    h(at + j, at + j) = 1.0 / (s * s);
    const double cross = 2.0 * r / (s * s * s);
    h(at + j, at + d + j) = cross;
    h(at + d + j, at + j) = cross;
    h(at + d + j, at + d + j) = 3.0 * r * r / (s * s * s * s) - 1.0 / (s * s);
  }
}

}  // namespace

VectorXd finite_diff_gradient(const std::function<double(const VectorXd&)>& f,
                              const VectorXd& theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("oracle: finite-difference step must be positive");
  VectorXd g(theta.size());
  VectorXd t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = t[i];
    t[i] = saved + h;
    const double up = f(t);
    t[i] = saved - h;
    const double down = f(t);
    t[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

McEstimate mc_fisher_gaussian(const VectorXd& mean, const VectorXd& scale,
                              std::int64_t n_samples, std::uint64_t seed) {
  if (mean.size() != scale.size() || (scale.array() <= 0.0).any())
    throw std::invalid_argument("oracle: bad gaussian parameters");
  const Eigen::Index d = mean.size();
  CounterRng normals(substream(seed, 0x6f72616331));
  MatrixAccumulator acc(2 * d, 2 * d);
  MatrixXd h = MatrixXd::Zero(2 * d, 2 * d);
  VectorXd x(d);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    for (Eigen::Index j = 0; j < d; ++j)
      x[j] = mean[j] + scale[j] * normals.normal(static_cast<std::uint64_t>(i) * d + j);
    add_neg_gaussian_hessian(h, 0, mean, scale, x);
    acc.add(h);
  }
  return acc.finish();
}

McEstimate mc_fisher_categorical(const VectorXd& weights, std::int64_t n_samples,
                                 std::uint64_t seed) {
  check_weights(weights);
  const Eigen::Index k = weights.size();
  // -d2/dlogits2 log softmax(logits)_c = diag(pi) - pi pi^T for every observed
  // category c, so each sample contributes the same matrix.
  const MatrixXd neg_hessian =
      MatrixXd(weights.asDiagonal()) - weights * weights.transpose();
  CounterRng cats(substream(seed, 0x6f72616332));
  MatrixAccumulator acc(k, k);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    (void)sample_category(weights, cats.uniform(static_cast<std::uint64_t>(i)));
    acc.add(neg_hessian);
  }
  return acc.finish();
}

McEstimate mc_complete_fim(const GmmSpec& spec, std::int64_t n_samples, std::uint64_t seed) {
  check_weights(spec.weights);
  const Eigen::Index k = spec.weights.size();
  const Eigen::Index d = spec.means.cols();
  if (spec.means.rows() != k || spec.scales.rows() != k || spec.scales.cols() != d ||
      (spec.scales.array() <= 0.0).any())
    throw std::invalid_argument("oracle: bad mixture spec");
  const Eigen::Index dim = 2 * k * d + k;
  const MatrixXd cat_block =
      MatrixXd(spec.weights.asDiagonal()) - spec.weights * spec.weights.transpose();

  CounterRng normals(substream(seed, 0x6f72616333));
  CounterRng cats(substream(seed, 0x6f72616334));
  MatrixAccumulator acc(dim, dim);
  MatrixXd h = MatrixXd::Zero(dim, dim);
  VectorXd x(d);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const int c = sample_category(spec.weights, cats.uniform(static_cast<std::uint64_t>(i)));
    const VectorXd mu = spec.means.row(c);
    const VectorXd sd = spec.scales.row(c);
    for (Eigen::Index j = 0; j < d; ++j)
      x[j] = mu[j] + sd[j] * normals.normal(static_cast<std::uint64_t>(i) * d + j);
    // log p(c, x) = log softmax(logits)_c + log N_c(x): the Gaussian part only
    // touches component c's block, the categorical part only the logit block.
    h.setZero();
    add_neg_gaussian_hessian(h, 2 * d * c, mu, sd, x);
    h.bottomRightCorner(k, k) = cat_block;
    acc.add(h);
  }
  return acc.finish();
}

MatrixXd moore_penrose_pinv(const MatrixXd& m, double tol) {
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double cut = tol * sv.maxCoeff();
  VectorXd inv = VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

VectorXd gaussian_fim_diag(const VectorXd& scale) {
  VectorXd out(2 * scale.size());
  out.head(scale.size()) = scale.array().square().inverse();
  out.tail(scale.size()) = 2.0 * scale.array().square().inverse();
  return out;
}

MatrixXd categorical_fim(const VectorXd& weights) {
  check_weights(weights);
  return MatrixXd(weights.asDiagonal()) - weights * weights.transpose();
}

MatrixXd categorical_fim_ginv(const VectorXd& weights) {
  check_weights(weights);
  const Eigen::Index k = weights.size();
  return MatrixXd(weights.array().inverse().matrix().asDiagonal()) - MatrixXd::Ones(k, k);
}

}  // namespace ngem::oracle
