#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "ngem/diffnet.hpp"
#include "ngem/oracle.hpp"
#include "ngem/rng.hpp"

using namespace ngem;

namespace {
bool same_bits(const VectorXd& a, const VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * 8) == 0;
}
}  // namespace

TEST_CASE("head width counts logits, means and scales") {
  CHECK(mixture_head_width(2, 1) == 6);
  CHECK(mixture_head_width(3, 2) == 15);
  CHECK(mixture_head_width(1, 1) == 3);
  CHECK_THROWS_AS(mixture_head_width(0, 1), std::invalid_argument);
}

TEST_CASE("init_net builds hidden gelu layers plus an identity head") {
  const DenseNet net = init_net({1, 4}, 2, 1, 7);
  REQUIRE(net.layers.size() == 2);
  CHECK(net.layers[0].weight.rows() == 4);
  CHECK(net.layers[0].weight.cols() == 1);
  CHECK(net.layers[0].act == Activation::Gelu);
  CHECK(net.layers[1].weight.rows() == 6);
  CHECK(net.layers[1].weight.cols() == 4);
  CHECK(net.layers[1].act == Activation::Identity);
  CHECK(net.param_count() == (4 + 4) + (24 + 6));
  CHECK(net.input_dim() == 1);
  CHECK(net.output_dim() == 6);

  // fan-in uniform bound on every weight
  for (const Layer& l : net.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    CHECK(l.weight.cwiseAbs().maxCoeff() <= bound);
  }
  // biases: zero except the head's scale block, which puts softplus at 1 - 1e-6
  CHECK(net.layers[0].bias.cwiseAbs().maxCoeff() == 0.0);
  CHECK(net.layers[1].bias.head(4).cwiseAbs().maxCoeff() == 0.0);
  const double scale_bias = std::log(std::expm1(1.0 - 1e-6));
  CHECK(net.layers[1].bias[4] == doctest::Approx(scale_bias).epsilon(1e-12));
  CHECK(net.layers[1].bias[5] == doctest::Approx(scale_bias).epsilon(1e-12));
}

TEST_CASE("init_net is reproducible per seed") {
  const DenseNet a = init_net({2, 8, 8}, 3, 2, 11);
  const DenseNet b = init_net({2, 8, 8}, 3, 2, 11);
  const DenseNet c = init_net({2, 8, 8}, 3, 2, 12);
  CHECK(same_bits(a.flat_params(), b.flat_params()));
  CHECK(!same_bits(a.flat_params(), c.flat_params()));
}

TEST_CASE("gelu matches its definition and decays in the left tail") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(gelu(-10.0)) < 1e-6);
  CHECK(gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-14));

  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("forward computes an affine map through an identity-only net") {
  DenseNet net;
  net.components = 1;
  net.target_dim = 1;
  Layer l;
  l.weight.resize(3, 2);
  l.weight << 1.0, 2.0, 0.0, -1.0, 3.0, 0.5;
  l.bias = VectorXd::Zero(3);
  l.bias << 0.1, 0.2, 0.3;
  l.act = Activation::Identity;
  net.layers.push_back(l);

  MatrixXd x(2, 2);
  x << 1.0, 1.0, -2.0, 0.5;
  const MatrixXd out = forward(net, x);
  CHECK(out(0, 0) == doctest::Approx(1.0 * 1 + 2.0 * 1 + 0.1));
  CHECK(out(1, 2) == doctest::Approx(3.0 * -2 + 0.5 * 0.5 + 0.3));

  CHECK_THROWS_AS(forward(net, MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("rows pass through the net independently") {
  const DenseNet net = init_net({3, 5}, 2, 1, 3);
  MatrixXd x(4, 3);
  Rng rng(1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2.0, 2.0);
  const MatrixXd full = forward(net, x);
  for (int i = 0; i < 4; ++i) {
    const MatrixXd row = forward(net, x.row(i));
    CHECK((full.row(i) - row).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("backward agrees with finite differences of a scalar readout") {
  const DenseNet base = init_net({3, 6, 4}, 2, 1, 5);
  MatrixXd x(3, 3), c(3, base.output_dim());
  Rng rng(2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(-1.0, 1.0);

  // loss(theta) = sum(c .* net(x; theta))
  auto f = [&](const VectorXd& theta) {
    DenseNet net = base;
    net.set_flat_params(theta);
    return forward(net, x).cwiseProduct(c).sum();
  };

  ForwardTrace trace;
  forward(base, x, trace);
  const VectorXd analytic = backward(base, trace, c);
  const VectorXd fd = oracle::finite_diff_gradient(f, base.flat_params(), 1e-6);
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  CHECK((analytic - fd).cwiseAbs().maxCoeff() / scale < 1e-7);
}

TEST_CASE("backward refuses a stale or mismatched trace") {
  const DenseNet net = init_net({2, 4}, 2, 1, 9);
  ForwardTrace trace;
  CHECK_THROWS_AS(backward(net, trace, MatrixXd::Zero(1, 6)), std::logic_error);
  forward(net, MatrixXd::Zero(3, 2), trace);
  CHECK_THROWS_AS(backward(net, trace, MatrixXd::Zero(2, 6)), std::logic_error);
}

TEST_CASE("flat parameter round trip preserves every coefficient") {
  DenseNet net = init_net({2, 4, 4}, 2, 2, 13);
  const VectorXd flat = net.flat_params();
  DenseNet other = init_net({2, 4, 4}, 2, 2, 14);
  other.set_flat_params(flat);
  CHECK(same_bits(other.flat_params(), flat));
  CHECK_THROWS_AS(net.set_flat_params(VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("checkpoint files round-trip the net exactly") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "ngem_test_net.mdn";
  const DenseNet net = init_net({3, 8, 8}, 4, 2, 21);
  save_net(net, path.string());
  const DenseNet back = load_net(path.string());
  CHECK(back.components == 4);
  CHECK(back.target_dim == 2);
  REQUIRE(back.layers.size() == net.layers.size());
  CHECK(same_bits(back.flat_params(), net.flat_params()));
  CHECK(back.layers[0].act == Activation::Gelu);
  CHECK(back.layers.back().act == Activation::Identity);

  // corrupt magic -> error
  {
    std::FILE* f = std::fopen(path.string().c_str(), "r+b");
    REQUIRE(f);
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_net(path.string()), std::runtime_error);
  fs::remove(path);
  CHECK_THROWS_AS(load_net(path.string()), std::runtime_error);
}
