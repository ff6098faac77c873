// Command-line front end: train a model, benchmark the loss overhead, or run
// the built-in numerical verification suite.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ngem/harness.hpp"
#include "ngem/oracle.hpp"
#include "ngem/rng.hpp"

namespace {

int usage(const char* argv0) {
  std::printf(
      "usage: %s <command> [options]\n"
      "\n"
      "commands:\n"
      "  train  --config <path> [--seed N] [--loss nll|sgem|ngem] [--out <dir>]\n"
      "         run one training job; writes <dir>/metrics.csv and <dir>/model.mdn\n"
      "  bench  --config <path> --updates N [--warmup N]\n"
      "         time N optimizer updates with loss=ngem vs loss=nll\n"
      "  verify [--samples N] [--seed N]\n"
      "         check gradients and Fisher preconditioners against oracles\n",
      argv0);
  return 2;
}

const char* flag_value(int argc, char** argv, int& i, const char* flag) {
  if (i + 1 >= argc) {
    std::fprintf(stderr, "error: %s needs a value\n", flag);
    std::exit(2);
  }
  return argv[++i];
}

int cmd_train(int argc, char** argv) {
  std::string config_path, out_dir = ".";
  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--config")) config_path = flag_value(argc, argv, i, "--config");
    else if (!std::strcmp(argv[i], "--seed")) overrides.emplace_back("seed", flag_value(argc, argv, i, "--seed"));
    else if (!std::strcmp(argv[i], "--loss")) overrides.emplace_back("loss", flag_value(argc, argv, i, "--loss"));
    else if (!std::strcmp(argv[i], "--out")) out_dir = flag_value(argc, argv, i, "--out");
    else {
      std::fprintf(stderr, "error: unknown flag '%s'\n", argv[i]);
      return 2;
    }
  }
  if (config_path.empty()) {
    std::fprintf(stderr, "error: train needs --config\n");
    return 2;
  }
  ngem::RunConfig cfg = ngem::parse_config_file(config_path);
  for (const auto& [k, v] : overrides) ngem::apply_override(cfg, k, v);
  ngem::validate_config(cfg);

  ngem::TrainResult result = ngem::train(cfg);
  std::filesystem::create_directories(out_dir);
  ngem::emit_csv(result.metrics, out_dir + "/metrics.csv");
  ngem::save_checkpoint(result.model, out_dir + "/model.mdn");

  const ngem::MetricsRecord& last = result.metrics.back();
  std::printf("iterations      %lld\n", static_cast<long long>(last.iteration));
  std::printf("train_loss      %.6f\n", last.train_loss);
  std::printf("test_nll        %.6f\n", last.test_nll);
  if (std::isfinite(result.truth_nll))
    std::printf("truth_nll       %.6f\n", result.truth_nll);
  std::printf("entropy         %.6f\n", last.entropy);
  std::printf("rmse_min        %.6f\n", last.rmse_min);
  std::printf("wall_ms         %.1f\n", last.wall_ms);
  std::printf("wrote %s/metrics.csv and %s/model.mdn\n", out_dir.c_str(), out_dir.c_str());
  if (result.abort) {
    std::fprintf(stderr, "aborted at iteration %lld: non-finite %s\n",
                 static_cast<long long>(result.abort->iteration), result.abort->tensor.c_str());
    return 1;
  }
  return 0;
}

int cmd_bench(int argc, char** argv) {
  std::string config_path;
  std::int64_t updates = 0, warmup = 100;
  for (int i = 2; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--config")) config_path = flag_value(argc, argv, i, "--config");
    else if (!std::strcmp(argv[i], "--updates")) updates = std::atoll(flag_value(argc, argv, i, "--updates"));
    else if (!std::strcmp(argv[i], "--warmup")) warmup = std::atoll(flag_value(argc, argv, i, "--warmup"));
    else {
      std::fprintf(stderr, "error: unknown flag '%s'\n", argv[i]);
      return 2;
    }
  }
  if (config_path.empty() || updates < 1) {
    std::fprintf(stderr, "error: bench needs --config and --updates\n");
    return 2;
  }
  const ngem::RunConfig cfg = ngem::parse_config_file(config_path);
  const auto [ngem_s, nll_s] = ngem::benchmark_overhead(cfg, updates, warmup);
  std::printf("updates         %lld\n", static_cast<long long>(updates));
  std::printf("ngem            %.3f s  (%.1f us/update)\n", ngem_s, 1e6 * ngem_s / updates);
  std::printf("nll             %.3f s  (%.1f us/update)\n", nll_s, 1e6 * nll_s / updates);
  std::printf("overhead ratio  %.4f\n", ngem_s / nll_s);
  return 0;
}

// ---------------------------------------------------------------------------
// verify: numerical checks of the gradient and preconditioner implementations
// against finite differences, Monte-Carlo Fisher estimates, and explicit
// pseudo-inverses.

struct Verifier {
  int failures = 0;

  void check(const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %-52s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) ++failures;
  }
};

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

// Random mixture-head instance used by the gradient checks.
struct HeadInstance {
  ngem::MatrixXd raw, y;
  int k, dy;
};

HeadInstance random_instance(ngem::Rng& rng, int batch, int k, int dy) {
  HeadInstance h;
  h.k = k;
  h.dy = dy;
  h.raw.resize(batch, ngem::mixture_head_width(k, dy));
  h.y.resize(batch, dy);
  for (Eigen::Index i = 0; i < h.raw.size(); ++i) h.raw.data()[i] = rng.uniform(-1.5, 1.5);
  for (Eigen::Index i = 0; i < h.y.size(); ++i) h.y.data()[i] = rng.uniform(-2.0, 2.0);
  return h;
}

int cmd_verify(int argc, char** argv) {
  std::int64_t samples = 1000000;
  std::uint64_t seed = 7;
  for (int i = 2; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--samples")) samples = std::atoll(flag_value(argc, argv, i, "--samples"));
    else if (!std::strcmp(argv[i], "--seed")) seed = std::strtoull(flag_value(argc, argv, i, "--seed"), nullptr, 10);
    else {
      std::fprintf(stderr, "error: unknown flag '%s'\n", argv[i]);
      return 2;
    }
  }
  using ngem::MatrixXd;
  using ngem::VectorXd;
  namespace oracle = ngem::oracle;
  Verifier v;
  ngem::Rng rng(seed);

  // 1. The three losses share one gradient: finite differences of each loss
  //    value (responsibilities frozen for sgem/ngem) against the analytic
  //    distribution gradient chained through the head.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
      HeadInstance inst = random_instance(rng, 3, 2 + trial % 2, 1 + trial % 3);
      const ngem::MixtureParams p0 = ngem::head_transform(inst.raw, inst.k, inst.dy);
      const ngem::Responsibilities rho = ngem::responsibilities(p0, inst.y);
      const ngem::MatrixXd d_raw =
          ngem::head_backward(p0, ngem::dist_gradients(p0, rho, inst.y)) /
          static_cast<double>(inst.raw.rows());
      const VectorXd analytic = Eigen::Map<const VectorXd>(d_raw.data(), d_raw.size());

      for (int which = 0; which < 3; ++which) {
        auto f = [&](const VectorXd& flat) {
          ngem::MatrixXd raw = Eigen::Map<const ngem::MatrixXd>(flat.data(), inst.raw.rows(),
                                                                inst.raw.cols());
          const ngem::MixtureParams p = ngem::head_transform(raw, inst.k, inst.dy);
          if (which == 0) return ngem::nll_loss(p, inst.y);
          if (which == 1) return ngem::sgem_loss(p, rho, inst.y);
          return ngem::ngem_loss(p, rho, inst.y);
        };
        const VectorXd flat0 = Eigen::Map<const VectorXd>(inst.raw.data(), inst.raw.size());
        const VectorXd fd = oracle::finite_diff_gradient(f, flat0, 1e-5);
        worst = std::max(worst, (fd - analytic).cwiseAbs().maxCoeff());
      }
    }
    v.check("loss gradients vs finite differences", worst < 1e-6, fmt("max abs err %.2e", worst));
  }

  // 2. Gaussian Fisher matrix: Monte-Carlo negative Hessian vs diag(1/s^2, 2/s^2).
  {
    VectorXd mean(2), scale(2);
    mean << 0.3, -1.2;
    scale << 0.7, 1.6;
    const oracle::McEstimate est = oracle::mc_fisher_gaussian(mean, scale, samples, seed);
    const VectorXd expect = oracle::gaussian_fim_diag(scale);
    double worst_z = 0.0, worst_rel = 0.0;
    for (Eigen::Index i = 0; i < est.value.rows(); ++i)
      for (Eigen::Index j = 0; j < est.value.cols(); ++j) {
        const double target = i == j ? expect[i] : 0.0;
        const double gap = std::abs(est.value(i, j) - target);
        const double tol = 3.0 * est.std_error(i, j) + 1e-9;
        worst_z = std::max(worst_z, gap / tol);
        if (i == j) worst_rel = std::max(worst_rel, gap / target);
      }
    v.check("gaussian Fisher matrix vs Monte-Carlo", worst_z < 1.0 && worst_rel < 0.02,
            fmt("max gap %.2f * tol, diag rel err %.4f", worst_z, worst_rel));
  }

  // 3. Categorical Fisher matrix and its pseudo-inverse.
  {
    VectorXd w(3);
    w << 0.2, 0.5, 0.3;
    const oracle::McEstimate est = oracle::mc_fisher_categorical(w, std::min<std::int64_t>(samples, 100000), seed);
    const double gap = (est.value - oracle::categorical_fim(w)).cwiseAbs().maxCoeff();

    const MatrixXd pinv = oracle::moore_penrose_pinv(oracle::categorical_fim(w));
    const MatrixXd f = oracle::categorical_fim(w);
    const double mp = std::max({(f * pinv * f - f).cwiseAbs().maxCoeff(),
                                (pinv * f * pinv - pinv).cwiseAbs().maxCoeff(),
                                ((f * pinv).transpose() - f * pinv).cwiseAbs().maxCoeff(),
                                ((pinv * f).transpose() - pinv * f).cwiseAbs().maxCoeff()});
    const VectorXd u = VectorXd::Constant(4, 0.25);
    const double closed =
        (oracle::moore_penrose_pinv(oracle::categorical_fim(u)) - oracle::categorical_fim_ginv(u))
            .cwiseAbs()
            .maxCoeff();
    v.check("categorical Fisher matrix + pseudo-inverse",
            gap < 1e-9 && mp < 1e-10 && closed < 1e-10,
            fmt("fim gap %.1e, worst MP residual %.1e", gap, std::max(mp, closed)));
  }

  // 4. Complete-data Fisher matrix: block-diagonal with pi_k-scaled Gaussian
  //    blocks and the categorical block.
  {
    oracle::GmmSpec spec;
    spec.weights = VectorXd(2);
    spec.weights << 0.35, 0.65;
    spec.means = MatrixXd(2, 1);
    spec.means << -1.0, 2.0;
    spec.scales = MatrixXd(2, 1);
    spec.scales << 0.6, 1.3;
    const oracle::McEstimate est = oracle::mc_complete_fim(spec, samples, seed);
    MatrixXd expect = MatrixXd::Zero(6, 6);
    for (int k = 0; k < 2; ++k) {
      const VectorXd fd = oracle::gaussian_fim_diag(spec.scales.row(k));
      expect(2 * k, 2 * k) = spec.weights[k] * fd[0];
      expect(2 * k + 1, 2 * k + 1) = spec.weights[k] * fd[1];
    }
    expect.bottomRightCorner(2, 2) = oracle::categorical_fim(spec.weights);
    double worst_z = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i)
      for (Eigen::Index j = 0; j < 6; ++j) {
        const double tol = 3.0 * est.std_error(i, j) + 1e-9;
        worst_z = std::max(worst_z, std::abs(est.value(i, j) - expect(i, j)) / tol);
      }
    v.check("complete-data Fisher matrix block structure", worst_z < 1.0,
            fmt("max gap %.2f * tol", worst_z));
  }

  // 5. Gaussian preconditioner inverts its Fisher block: the preconditioned
  //    gradient equals F_block^-1 / pi applied to the plain gradient.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      HeadInstance inst = random_instance(rng, 1, 3, 2);
      const ngem::MixtureParams p = ngem::head_transform(inst.raw, inst.k, inst.dy);
      const ngem::Responsibilities rho = ngem::responsibilities(p, inst.y);
      const ngem::DistGradients g = ngem::dist_gradients(p, rho, inst.y);
      const ngem::DistGradients nat =
          ngem::natural_gradient(p, rho, inst.y, ngem::CategoricalMode::Analytic);
      const ngem::MatrixXd pi = p.weights();
      for (int k = 0; k < inst.k; ++k)
        for (int d = 0; d < inst.dy; ++d) {
          const int c = k * inst.dy + d;
          const double s2 = p.scales(0, c) * p.scales(0, c);
          const double wk = std::max(pi(0, k), 1e-6);
          worst = std::max(worst,
                           std::abs(nat.d_means(0, c) - g.d_means(0, c) * s2 / wk));
          worst = std::max(worst,
                           std::abs(nat.d_scales(0, c) - g.d_scales(0, c) * s2 / (2.0 * wk)));
        }
    }
    v.check("gaussian preconditioner inverts Fisher block", worst < 1e-12,
            fmt("max abs err %.2e", worst));
  }

  // 6. Categorical preconditioner (analytic mode) solves F x = pi - rho; it
  //    matches the explicit pseudo-inverse solution up to the all-ones logit
  //    direction, which softmax ignores.
  {
    double worst_solve = 0.0, worst_proj = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const int k = 2 + trial % 4;
      VectorXd logits(k), lrho(k);
      for (int i = 0; i < k; ++i) {
        logits[i] = rng.uniform(-2.0, 2.0);
        lrho[i] = rng.uniform(-2.0, 2.0);
      }
      const VectorXd pi = (logits.array() - logits.maxCoeff()).exp() /
                          (logits.array() - logits.maxCoeff()).exp().sum();
      const VectorXd rho = (lrho.array() - lrho.maxCoeff()).exp() /
                           (lrho.array() - lrho.maxCoeff()).exp().sum();
      const MatrixXd d = ngem::precondition_categorical(rho.transpose(), pi.transpose(),
                                                        ngem::CategoricalMode::Analytic);
      const VectorXd x = d.row(0);
      const MatrixXd f = oracle::categorical_fim(pi);
      worst_solve = std::max(worst_solve, (f * x - (pi - rho)).cwiseAbs().maxCoeff());
      const VectorXd via_pinv = oracle::moore_penrose_pinv(f) * (pi - rho);
      const VectorXd centered = x.array() - x.mean();
      worst_proj = std::max(worst_proj, (centered - via_pinv).cwiseAbs().maxCoeff());
    }
    v.check("categorical preconditioner vs pseudo-inverse",
            worst_solve < 1e-8 && worst_proj < 1e-8,
            fmt("solve err %.1e, projected err %.1e", worst_solve, worst_proj));
  }

  // 7. Single-component reduction: the natural mean gradient is exactly
  //    scale^2 times the plain NLL mean gradient.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      HeadInstance inst = random_instance(rng, 4, 1, 2);
      const ngem::MixtureParams p = ngem::head_transform(inst.raw, 1, 2);
      const ngem::Responsibilities rho = ngem::responsibilities(p, inst.y);
      const ngem::DistGradients nat =
          ngem::natural_gradient(p, rho, inst.y, ngem::CategoricalMode::Analytic);
      for (Eigen::Index i = 0; i < inst.y.rows(); ++i)
        for (int d = 0; d < 2; ++d) {
          const double s2 = p.scales(i, d) * p.scales(i, d);
          const double nll_grad = (p.means(i, d) - inst.y(i, d)) / s2;  // K=1 NLL mean gradient
          worst = std::max(worst, std::abs(nat.d_means(i, d) - s2 * nll_grad));
        }
    }
    v.check("K=1 natural gradient = scale^2 * NLL gradient", worst < 1e-10,
            fmt("max abs err %.2e", worst));
  }

  std::printf("%s: %d check(s) failed\n", v.failures ? "FAIL" : "OK", v.failures);
  return v.failures;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage(argv[0]);
  try {
    if (!std::strcmp(argv[1], "train")) return cmd_train(argc, argv);
    if (!std::strcmp(argv[1], "bench")) return cmd_bench(argc, argv);
    if (!std::strcmp(argv[1], "verify")) return cmd_verify(argc, argv);
    if (!std::strcmp(argv[1], "--help") || !std::strcmp(argv[1], "-h")) {
      usage(argv[0]);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::fprintf(stderr, "error: unknown command '%s'\n", argv[1]);
  return usage(argv[0]);
}
