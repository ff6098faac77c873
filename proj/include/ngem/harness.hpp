#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ngem/data.hpp"
#include "ngem/diffnet.hpp"
#include "ngem/mixture.hpp"
#include "ngem/optim.hpp"

// Experiment harness: run configuration, the training loop, evaluation
// metrics, metrics-CSV output, model checkpoints, and the loss-overhead
// benchmark.

namespace ngem {

enum class LossKind { Nll, Sgem, Ngem };

struct RunConfig {
  LossKind loss = LossKind::Ngem;
  CategoricalMode categorical_mode = CategoricalMode::Reference;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double beta = 1e-2;  // learning rate
  int components = 2;  // K
  std::int64_t epochs = 1;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 1;

  std::string dataset = "two_gaussians";  // two_gaussians | two_sinusoids | csv
  std::int64_t n_per_mode = 100;          // synthetic generators
  std::string csv_path;
  std::vector<std::string> target_columns;
  bool normalize = false;
  double train_frac = 1.0;  // 1 -> evaluate on the training set

  std::vector<int> hidden;  // hidden widths; empty -> affine head on the raw features
  bool direct_gmm = false;  // skip the net entirely; one global parameter vector

  std::int64_t eval_every = 100;  // metrics cadence, in updates
  bool log_means = false;         // add per-component mean columns to the metrics
};

// Flat "key = value" text, one setting per line, '#' comments.  Unknown keys
// and malformed values are errors.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
void validate_config(const RunConfig& cfg);

struct MetricsRecord {
  std::int64_t iteration = 0;
  double train_loss = 0.0;  // configured loss on the most recent batch
  double test_nll = 0.0;    // marginal NLL on the evaluation set
  double entropy = 0.0;     // entropy of the evaluation-averaged mixture weights
  double rmse_min = 0.0;    // RMSE of the nearest component mean
  double wall_ms = 0.0;     // cumulative update-path wall time
  std::vector<double> component_means;  // present when RunConfig::log_means
};

// Where and why a run stopped early: the first non-finite value seen.
struct AbortDiagnostic {
  std::int64_t iteration = 0;
  std::string tensor;
};

// A trainable model: either a dense net mapping features to the mixture head,
// or a single global parameter vector ("direct"), which ignores the input
// features.  The two flavors parameterize scales differently: the net head
// emits pre-activations mapped through softplus, while the direct vector
// stores the distribution parameters themselves — logits, means, and the
// scales as-is.  Direct scales can therefore be driven non-positive by a large
// step, which surfaces as a non-finite loss (a reportable divergence) rather
// than being clamped away.
class Predictor {
 public:
  Predictor() = default;
  static Predictor network(DenseNet net);
  static Predictor direct(int components, int target_dim, int input_dim, VectorXd raw);

  bool is_direct() const { return !net_.has_value(); }
  const DenseNet& net() const;  // throws for direct predictors
  int components() const { return k_; }
  int target_dim() const { return dy_; }
  int input_dim() const { return dx_; }
  std::int64_t param_count() const;
  VectorXd params() const;
  void set_params(const VectorXd& flat);

  // Raw head output for a batch (B x (K + 2*K*Dy)).
  MatrixXd raw_output(const MatrixXd& x, ForwardTrace& trace) const;
  // Raw head output -> distribution parameters (softplus head or direct).
  MixtureParams transform(const MatrixXd& raw) const;
  // Flat parameter gradient of the mean batch loss given the gradients at the
  // distribution boundary.
  VectorXd grad(const ForwardTrace& trace, const MixtureParams& params,
                const DistGradients& dist, Eigen::Index batch) const;
  MixtureParams predict(const MatrixXd& x) const;

 private:
  std::optional<DenseNet> net_;
  VectorXd raw_;  // direct parameters
  int k_ = 0, dy_ = 0, dx_ = 0;
};

struct TrainResult {
  Predictor model;
  std::vector<MetricsRecord> metrics;
  std::optional<AbortDiagnostic> abort;
  Dataset eval_data;
  // Evaluation-set NLL of the generating mixture, when the dataset carries one.
  double truth_nll = std::numeric_limits<double>::quiet_NaN();
};

TrainResult train(const RunConfig& cfg);

// Shannon entropy -sum p log p (natural log); zero entries contribute zero.
double entropy(const VectorXd& weights);

// sqrt(mean_i min_k ||mean_ik - y_i||^2): error of the best component mean.
double rmse_min(const MixtureParams& params, const MatrixXd& y);

// Wall-clock seconds for `updates` optimizer updates under the given config
// with loss = ngem vs loss = nll (first and second of the pair), measured
// after `warmup` untimed updates.  No metrics are evaluated while timing.
std::pair<double, double> benchmark_overhead(const RunConfig& cfg, std::int64_t updates,
                                             std::int64_t warmup);

// Metrics CSV with deterministic formatting (17 significant digits); parsing
// recovers the written doubles exactly.
void emit_csv(const std::vector<MetricsRecord>& metrics, const std::string& path);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

// Model checkpoints (.mdn), covering both predictor flavors.
void save_checkpoint(const Predictor& model, const std::string& path);
Predictor load_checkpoint(const std::string& path);

}  // namespace ngem
