#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Dataset construction: the two synthetic benchmarks (with their generating
// mixtures attached as ground truth), CSV ingestion, and batching.

namespace ngem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Per-column z-score statistics, kept so predictions can be mapped back.
struct NormStats {
  VectorXd x_mean, x_std;
  VectorXd y_mean, y_std;
};

// The mixture a synthetic dataset was drawn from (isotropic per component).
struct GmmTruth {
  VectorXd weights;  // K
  MatrixXd means;    // K x Dy
  VectorXd sigma;    // K, shared across target dimensions
  // Average negative log-density of rows of y under this mixture.
  double mean_nll(const MatrixXd& y) const;
};

struct Dataset {
  MatrixXd x;  // N x Dx
  MatrixXd y;  // N x Dy
  std::vector<std::string> x_names, y_names;
  std::optional<NormStats> norm;
  std::optional<GmmTruth> truth;

  Eigen::Index size() const { return x.rows(); }
  int feature_dim() const { return static_cast<int>(x.cols()); }
  int target_dim() const { return static_cast<int>(y.cols()); }
};

// Two well-separated isotropic Gaussians in the plane: means (+-2, +-2),
// sigma 0.5, equal weights.  The input is a constant dummy feature; exactly
// n_per_mode samples are drawn from each mode (stratified, then shuffled).
Dataset gen_two_gaussians(std::int64_t n_per_mode, std::uint64_t seed);

// Bimodal regression: x ~ U(0, 4*pi), y = pi*sin(x) (branch 0) or
// y = pi*sin(x + pi) (branch 1) plus N(0, 0.1) noise (variance 0.1).
// Stratified half/half across branches, then shuffled.
Dataset gen_two_sinusoids(std::int64_t n_per_mode, std::uint64_t seed);

// Noise-free branch mean of the sinusoid benchmark.
double sinusoid_branch_mean(double x, int branch);

// Loads a numeric CSV with a header row.  Columns named in target_columns
// become y (in the order given); every other column becomes x.  When
// normalize is set, both sides are z-scored and the statistics recorded.
// Errors carry row/column context.
Dataset load_csv(const std::string& path, const std::vector<std::string>& target_columns,
                 bool normalize);

// Writes x then y columns with headers; full round-trip precision.
void save_csv(const Dataset& data, const std::string& path);

struct TrainTestSplit {
  Dataset train, test;
};

// Shuffled split; train_frac in (0, 1], train_frac = 1 gives an empty test
// set.  Throws if the training side would be empty.
TrainTestSplit split_dataset(const Dataset& data, double train_frac, std::uint64_t seed);

// Mini-batch index plan for one epoch: a fresh shuffle of 0..n-1 (derived from
// seed and epoch) cut into batches; a short final batch is kept.
std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n, Eigen::Index batch_size,
                                                     std::uint64_t seed, std::int64_t epoch);

MatrixXd gather_rows(const MatrixXd& m, const std::vector<Eigen::Index>& rows);

}  // namespace ngem
