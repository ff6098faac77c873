#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ngem/harness.hpp"
#include "ngem/rng.hpp"

using namespace ngem;
namespace fs = std::filesystem;

namespace {

bool same_bits(const VectorXd& a, const VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * 8) == 0;
}

RunConfig tiny_gaussians_config() {
  RunConfig cfg;
  cfg.dataset = "two_gaussians";
  cfg.n_per_mode = 10;
  cfg.direct_gmm = true;
  cfg.loss = LossKind::Ngem;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.beta = 1e-2;
  cfg.epochs = 2;
  cfg.batch_size = 1;
  cfg.eval_every = 10;
  cfg.seed = 1;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config text parses every key and rejects junk") {
  const RunConfig cfg = parse_config_text(
      "# a comment\n"
      "loss = sgem\n"
      "categorical_mode = analytic\n"
      "optimizer = adam\n"
      "beta = 0.001\n"
      "components = 3\n"
      "epochs = 12\n"
      "batch_size = 64\n"
      "seed = 99\n"
      "dataset = two_sinusoids\n"
      "n_per_mode = 500\n"
      "train_frac = 0.9\n"
      "hidden = 32, 16\n"
      "eval_every = 25\n"
      "log_means = true\n");
  CHECK(cfg.loss == LossKind::Sgem);
  CHECK(cfg.categorical_mode == CategoricalMode::Analytic);
  CHECK(cfg.optimizer == OptimizerKind::Adam);
  CHECK(cfg.beta == 0.001);
  CHECK(cfg.components == 3);
  CHECK(cfg.epochs == 12);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.seed == 99);
  CHECK(cfg.dataset == "two_sinusoids");
  CHECK(cfg.n_per_mode == 500);
  CHECK(cfg.train_frac == 0.9);
  CHECK(cfg.hidden == std::vector<int>{32, 16});
  CHECK(cfg.eval_every == 25);
  CHECK(cfg.log_means);

  CHECK_THROWS_AS(parse_config_text("nonsense = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("beta = fast\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("loss = mse\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("just a line\n"), std::invalid_argument);
}

TEST_CASE("config validation catches inconsistent settings") {
  RunConfig cfg = tiny_gaussians_config();
  validate_config(cfg);  // baseline is fine

  RunConfig bad = cfg;
  bad.beta = 0.0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.dataset = "csv";
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);  // missing csv_path
  bad = cfg;
  bad.dataset = "imagenet";
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.hidden = {8};
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);  // direct + hidden
  bad = cfg;
  bad.train_frac = 0.0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.components = 0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
}

TEST_CASE("entropy of mixture weights") {
  CHECK(entropy(VectorXd::Constant(2, 0.5)) == doctest::Approx(0.69314718055994531).epsilon(1e-14));
  CHECK(entropy(VectorXd::Constant(10, 0.1)) == doctest::Approx(2.3025850929940457).epsilon(1e-13));
  VectorXd onehot = VectorXd::Zero(4);
  onehot[2] = 1.0;
  CHECK(entropy(onehot) == 0.0);
  VectorXd skew(2);
  skew << 0.9, 0.1;
  CHECK(entropy(skew) == doctest::Approx(-(0.9 * std::log(0.9) + 0.1 * std::log(0.1))));
  CHECK(entropy(skew) < std::log(2.0));
}

TEST_CASE("rmse_min takes the best component per sample") {
  MixtureParams p;
  p.components = 2;
  p.target_dim = 2;
  p.logits = MatrixXd::Zero(2, 2);
  p.means.resize(2, 4);
  // sample 0: components at (0,0) and (5,5); sample 1: at (1,1) and (-1,-1)
  p.means << 0, 0, 5, 5, 1, 1, -1, -1;
  p.scales = MatrixXd::Ones(2, 4);
  MatrixXd y(2, 2);
  y << 0, 0, 1, 1;
  // distances: 0 for sample 0, 0 for sample 1
  CHECK(rmse_min(p, y) == 0.0);
  y << 1, 0, 0, 0;
  // sample 0: min(|(1,0)|..) -> nearest (0,0) at 1; sample 1: nearest at sqrt(2)
  CHECK(rmse_min(p, y) == doctest::Approx(std::sqrt((1.0 + 2.0) / 2.0)).epsilon(1e-12));
}

TEST_CASE("direct predictor broadcasts and stores distribution parameters as-is") {
  VectorXd raw(6);
  raw << 0.3, -0.3, 1.0, -1.0, 0.2, 0.2;
  Predictor p = Predictor::direct(2, 1, 3, raw);
  CHECK(p.is_direct());
  CHECK(p.param_count() == 6);
  ForwardTrace trace;
  const MatrixXd out = p.raw_output(MatrixXd::Zero(4, 3), trace);
  CHECK(out.rows() == 4);
  for (int i = 0; i < 4; ++i) CHECK((out.row(i).transpose() - raw).cwiseAbs().maxCoeff() == 0.0);

  // no softplus on the direct path: the scale block is the scale itself
  const MixtureParams mp = p.transform(out);
  CHECK(mp.logits(0, 0) == 0.3);
  CHECK(mp.means(0, 1) == -1.0);
  CHECK(mp.scales(0, 0) == 0.2);
  CHECK(mp.scales(3, 1) == 0.2);

  // gradient = per-block column sums of the distribution gradients, / batch
  DistGradients g;
  g.d_logits = MatrixXd::Ones(4, 2);
  g.d_logits(0, 0) = 2.0;
  g.d_means = MatrixXd::Constant(4, 2, 3.0);
  g.d_scales = MatrixXd::Constant(4, 2, -1.0);
  const VectorXd flat = p.grad(trace, mp, g, 4);
  REQUIRE(flat.size() == 6);
  CHECK(flat[0] == doctest::Approx(5.0 / 4.0).epsilon(1e-15));
  CHECK(flat[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(flat[2] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(flat[5] == doctest::Approx(-1.0).epsilon(1e-15));

  CHECK_THROWS_AS(p.raw_output(MatrixXd::Zero(4, 2), trace), std::invalid_argument);
  CHECK_THROWS_AS(Predictor::direct(2, 1, 3, VectorXd::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(p.net(), std::logic_error);
}

TEST_CASE("train: metrics series is well-formed and deterministic") {
  const RunConfig cfg = tiny_gaussians_config();
  const TrainResult a = train(cfg);
  REQUIRE(!a.metrics.empty());
  CHECK(!a.abort.has_value());
  CHECK(a.metrics.front().iteration == 0);
  CHECK(a.metrics.back().iteration == 40);  // 2 epochs * 20 samples, batch 1
  CHECK(std::isfinite(a.truth_nll));

  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const MetricsRecord& r = a.metrics[i];
    CHECK(std::isfinite(r.train_loss));
    CHECK(std::isfinite(r.test_nll));
    CHECK(r.entropy >= 0.0);
    CHECK(r.entropy <= std::log(2.0) + 1e-12);
    CHECK(r.rmse_min >= 0.0);
    if (i > 0) {
      CHECK(a.metrics[i].iteration > a.metrics[i - 1].iteration);
      CHECK(a.metrics[i].wall_ms >= a.metrics[i - 1].wall_ms);
    }
  }

  // identical config -> identical learned state and metrics (wall time aside)
  const TrainResult b = train(cfg);
  CHECK(same_bits(a.model.params(), b.model.params()));
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].iteration == b.metrics[i].iteration);
    CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
    CHECK(a.metrics[i].test_nll == b.metrics[i].test_nll);
    CHECK(a.metrics[i].entropy == b.metrics[i].entropy);
    CHECK(a.metrics[i].rmse_min == b.metrics[i].rmse_min);
  }

  // a different seed trains on different data
  RunConfig other = cfg;
  other.seed = 2;
  CHECK(!same_bits(train(other).model.params(), a.model.params()));
}

TEST_CASE("nll and sgem drive bit-identical parameter trajectories") {
  RunConfig cfg = tiny_gaussians_config();
  cfg.epochs = 3;
  cfg.loss = LossKind::Nll;
  const TrainResult nll = train(cfg);
  cfg.loss = LossKind::Sgem;
  const TrainResult sgem = train(cfg);
  CHECK(same_bits(nll.model.params(), sgem.model.params()));
  // the loss VALUES differ (by the responsibility entropy), the path does not
  CHECK(nll.metrics.back().train_loss != sgem.metrics.back().train_loss);
  CHECK(nll.metrics.back().test_nll == sgem.metrics.back().test_nll);

  cfg.loss = LossKind::Ngem;
  const TrainResult ngem = train(cfg);
  CHECK(!same_bits(ngem.model.params(), nll.model.params()));  // different geometry
}

TEST_CASE("train supports shallow nets on the sinusoid data") {
  RunConfig cfg;
  cfg.dataset = "two_sinusoids";
  cfg.n_per_mode = 40;
  cfg.hidden = {16};
  cfg.components = 2;
  cfg.loss = LossKind::Ngem;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.beta = 1e-3;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.eval_every = 5;
  cfg.train_frac = 0.8;
  cfg.seed = 4;
  const TrainResult r = train(cfg);
  CHECK(!r.abort.has_value());
  CHECK(r.eval_data.size() == 16);  // 20% of 80
  CHECK(r.metrics.back().iteration == 3 * 4);  // ceil(64/16) = 4 batches per epoch
  CHECK(std::isfinite(r.metrics.back().test_nll));
  CHECK(!std::isfinite(r.truth_nll));  // sinusoids carry no closed-form mixture
}

TEST_CASE("direct mixture fit reaches the generating model's NLL within 1000 updates") {
  RunConfig cfg;
  cfg.dataset = "two_gaussians";
  cfg.n_per_mode = 100;
  cfg.direct_gmm = true;
  cfg.loss = LossKind::Ngem;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.beta = 1e-2;
  cfg.epochs = 5;  // 1000 single-sample updates
  cfg.batch_size = 1;
  cfg.eval_every = 50;
  cfg.seed = 1;
  const TrainResult r = train(cfg);
  REQUIRE(!r.abort.has_value());
  REQUIRE(std::isfinite(r.truth_nll));
  bool reached = false;
  for (const MetricsRecord& m : r.metrics)
    reached = reached || (m.iteration <= 1000 && m.test_nll <= r.truth_nll + 0.05);
  CHECK(reached);
}

TEST_CASE("a diverging run aborts with a diagnostic instead of emitting NaNs") {
  RunConfig cfg = tiny_gaussians_config();
  cfg.loss = LossKind::Nll;
  cfg.beta = 1e308;  // overflowing step size: parameters leave the finite range
  cfg.epochs = 5;
  const TrainResult r = train(cfg);
  REQUIRE(r.abort.has_value());
  CHECK(r.abort->iteration > 0);
  CHECK((r.abort->tensor == "loss" || r.abort->tensor == "params"));
  for (const MetricsRecord& m : r.metrics) CHECK(std::isfinite(m.train_loss));
}

TEST_CASE("metrics csv: exact round trip and byte-stable re-emission") {
  const fs::path path = fs::temp_directory_path() / "ngem_test_metrics.csv";
  std::vector<MetricsRecord> metrics(3);
  metrics[0] = {0, 3.14159265358979312, 2.0, 0.69314718055994531, 1.0 / 3.0, 0.0, {}};
  metrics[1] = {100, 1e-300, 1.5, 0.5, 2.5e17, 12.25, {}};
  metrics[2] = {200, -7.0, 1.25, 0.25, 0.125, 30.5, {}};
  emit_csv(metrics, path.string());

  const auto back = read_metrics_csv(path.string());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].iteration == metrics[i].iteration);
    CHECK(back[i].train_loss == metrics[i].train_loss);
    CHECK(back[i].test_nll == metrics[i].test_nll);
    CHECK(back[i].entropy == metrics[i].entropy);
    CHECK(back[i].rmse_min == metrics[i].rmse_min);
    CHECK(back[i].wall_ms == metrics[i].wall_ms);
  }

  const std::string once = slurp(path);
  emit_csv(metrics, path.string());
  CHECK(slurp(path) == once);
  CHECK(once.rfind("iteration,train_loss,test_nll,entropy,rmse_min,wall_ms\n", 0) == 0);
  fs::remove(path);
}

TEST_CASE("metrics csv: component-mean columns when enabled") {
  const fs::path path = fs::temp_directory_path() / "ngem_test_metrics_mu.csv";
  RunConfig cfg = tiny_gaussians_config();
  cfg.log_means = true;
  const TrainResult r = train(cfg);
  REQUIRE(!r.metrics.empty());
  CHECK(r.metrics.front().component_means.size() == 4);  // K=2 * Dy=2
  emit_csv(r.metrics, path.string());
  const auto back = read_metrics_csv(path.string());
  REQUIRE(back.size() == r.metrics.size());
  for (std::size_t i = 0; i < back.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(back[i].component_means[j] == r.metrics[i].component_means[j]);
  CHECK(slurp(path).rfind("iteration,train_loss,test_nll,entropy,rmse_min,wall_ms,mu0,mu1,mu2,mu3\n",
                          0) == 0);
  fs::remove(path);
}

TEST_CASE("checkpoints round-trip both predictor flavors") {
  const fs::path path = fs::temp_directory_path() / "ngem_test_ckpt.mdn";

  // direct
  VectorXd raw(6);
  raw << 1, 2, 3, 4, 5, 6;
  const Predictor direct = Predictor::direct(2, 1, 1, raw);
  save_checkpoint(direct, path.string());
  const Predictor d2 = load_checkpoint(path.string());
  CHECK(d2.is_direct());
  CHECK(d2.components() == 2);
  CHECK(d2.target_dim() == 1);
  CHECK(d2.input_dim() == 1);
  CHECK(same_bits(d2.params(), raw));

  // network
  const Predictor net = Predictor::network(init_net({2, 8}, 3, 2, 77));
  save_checkpoint(net, path.string());
  const Predictor n2 = load_checkpoint(path.string());
  CHECK(!n2.is_direct());
  CHECK(n2.components() == 3);
  CHECK(same_bits(n2.params(), net.params()));
  // the loaded net predicts identically
  const MatrixXd x = MatrixXd::Random(5, 2);
  CHECK((n2.predict(x).means - net.predict(x).means).cwiseAbs().maxCoeff() == 0.0);

  std::ofstream(path, std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("benchmark returns positive timings for both losses") {
  RunConfig cfg = tiny_gaussians_config();
  cfg.batch_size = 4;
  const auto [ngem_s, nll_s] = benchmark_overhead(cfg, 50, 10);
  CHECK(ngem_s > 0.0);
  CHECK(nll_s > 0.0);
  CHECK_THROWS_AS(benchmark_overhead(cfg, 0, 0), std::invalid_argument);
}
