#include "ngem/diffnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ngem/rng.hpp"

namespace ngem {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Scale block of the head bias starts at softplus^-1(1 - sigma_min) so that
// softplus(raw) + sigma_min = 1 at init; see head_transform in mixture.cpp.
double initial_scale_bias() { return std::log(std::expm1(1.0 - 1e-6)); }

void check_net(const DenseNet& net) {
  if (net.layers.empty()) throw std::invalid_argument("diffnet: empty network");
}

}  // namespace

int mixture_head_width(int components, int target_dim) {
  if (components < 1 || target_dim < 1)
    throw std::invalid_argument("diffnet: components and target_dim must be >= 1");
  return components + 2 * components * target_dim;
}

std::int64_t DenseNet::param_count() const {
  std::int64_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

VectorXd DenseNet::flat_params() const {
  VectorXd flat(param_count());
  std::int64_t at = 0;
  for (const Layer& l : layers) {
    flat.segment(at, l.weight.size()) = Eigen::Map<const VectorXd>(l.weight.data(), l.weight.size());
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

void DenseNet::set_flat_params(const VectorXd& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("diffnet: flat parameter size mismatch");
  std::int64_t at = 0;
  for (Layer& l : layers) {
    Eigen::Map<VectorXd>(l.weight.data(), l.weight.size()) = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

DenseNet init_net(const std::vector<int>& layer_sizes, int components, int target_dim,
                  std::uint64_t seed) {
  if (layer_sizes.empty()) throw std::invalid_argument("diffnet: layer_sizes must list the input width");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("diffnet: layer sizes must be >= 1");

  const int head = mixture_head_width(components, target_dim);
  std::vector<int> widths = layer_sizes;
  widths.push_back(head);

  DenseNet net;
  net.components = components;
  net.target_dim = target_dim;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer l;
    const int fan_in = widths[i], fan_out = widths[i + 1];
    const double bound = 1.0 / std::sqrt(fan_in);
    l.weight.resize(fan_out, fan_in);
    for (std::int64_t j = 0; j < l.weight.size(); ++j)
      l.weight.data()[j] = rng.uniform(-bound, bound);
    l.bias = VectorXd::Zero(fan_out);
    const bool is_head = (i + 2 == widths.size());
    l.act = is_head ? Activation::Identity : Activation::Gelu;
    if (is_head) l.bias.tail(components * target_dim).setConstant(initial_scale_bias());
    net.layers.push_back(std::move(l));
  }
  return net;
}

const MatrixXd& forward(const DenseNet& net, const MatrixXd& x, ForwardTrace& trace) {
  check_net(net);
  if (x.cols() != net.input_dim())
    throw std::invalid_argument("diffnet: input has " + std::to_string(x.cols()) +
                                " features, net expects " + std::to_string(net.input_dim()));
  const std::size_t n = net.layers.size();
  trace.pre.resize(n);
  trace.post.resize(n);
  trace.gelu_cdf.resize(n);
  trace.input = x;

  const MatrixXd* in = &trace.input;
  for (std::size_t i = 0; i < n; ++i) {
    const Layer& l = net.layers[i];
    trace.pre[i].noalias() = (*in) * l.weight.transpose();
    trace.pre[i].rowwise() += l.bias.transpose();
    if (l.act == Activation::Gelu) {
      MatrixXd& z = trace.pre[i];
      MatrixXd& cdf = trace.gelu_cdf[i];
      cdf.resize(z.rows(), z.cols());
      for (std::int64_t j = 0; j < z.size(); ++j)
        cdf.data()[j] = 0.5 * (1.0 + std::erf(z.data()[j] * kInvSqrt2));
      trace.post[i] = z.cwiseProduct(cdf);
    } else {
      trace.post[i] = trace.pre[i];
    }
    in = &trace.post[i];
  }
  trace.valid = true;
  return trace.post.back();
}

MatrixXd forward(const DenseNet& net, const MatrixXd& x) {
  ForwardTrace trace;
  return forward(net, x, trace);
}

VectorXd backward(const DenseNet& net, const ForwardTrace& trace, const MatrixXd& d_raw) {
  check_net(net);
  const std::size_t n = net.layers.size();
  if (!trace.valid || trace.post.size() != n)
    throw std::logic_error("diffnet: backward called without a matching forward trace");
  if (d_raw.rows() != trace.post.back().rows() || d_raw.cols() != trace.post.back().cols())
    throw std::logic_error("diffnet: d_raw shape does not match the traced output");

  VectorXd flat(net.param_count());
  std::int64_t at = flat.size();
  // Propagation buffers persist across calls; with 128-wide layers each one is
  // a 128KB block, and re-allocating them every update dominates the GEMM cost.
  static thread_local MatrixXd d_pre, d_next;
  const MatrixXd* d_post = &d_raw;
  for (std::size_t i = n; i-- > 0;) {
    const Layer& l = net.layers[i];
    if (l.act == Activation::Gelu) {
      // d gelu(z)/dz = Phi(z) + z*phi(z); Phi came cached from the forward pass.
      const MatrixXd& z = trace.pre[i];
      const MatrixXd& cdf = trace.gelu_cdf[i];
      d_pre = d_post->cwiseProduct(
          cdf + z.cwiseProduct((kInvSqrt2Pi * (-0.5 * z.array().square()).exp()).matrix()));
    } else {
      d_pre = *d_post;
    }
    const MatrixXd& in = (i == 0) ? trace.input : trace.post[i - 1];
    at -= l.bias.size();
    flat.segment(at, l.bias.size()) = d_pre.colwise().sum().transpose();
    at -= l.weight.size();
    Eigen::Map<MatrixXd>(flat.data() + at, l.weight.rows(), l.weight.cols()).noalias() =
        d_pre.transpose() * in;
    if (i > 0) {
      d_next.noalias() = d_pre * l.weight;
      d_post = &d_next;
    }
  }
  return flat;
}

namespace {

constexpr char kMagic[4] = {'M', 'D', 'N', '1'};

void write_i32(std::ofstream& f, std::int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ofstream& f, std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
std::int32_t read_i32(std::ifstream& f) {
  std::int32_t v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::int64_t read_i64(std::ifstream& f) {
  std::int64_t v;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_net(const DenseNet& net, const std::string& path) {
  check_net(net);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("diffnet: cannot open " + path + " for writing");
  f.write(kMagic, 4);
  write_i32(f, net.components);
  write_i32(f, net.target_dim);
  write_i32(f, static_cast<std::int32_t>(net.layers.size()));
  write_i32(f, net.input_dim());
  for (const Layer& l : net.layers) write_i32(f, static_cast<std::int32_t>(l.weight.rows()));
  const VectorXd flat = net.flat_params();
  write_i64(f, flat.size());
  f.write(reinterpret_cast<const char*>(flat.data()), flat.size() * 8);
  if (!f) throw std::runtime_error("diffnet: short write to " + path);
}

DenseNet load_net(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("diffnet: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("diffnet: " + path + " is not a checkpoint file");
  const int components = read_i32(f);
  const int target_dim = read_i32(f);
  const int n_layers = read_i32(f);
  const int input = read_i32(f);
  if (!f || n_layers < 1 || components < 1 || target_dim < 1 || input < 1)
    throw std::runtime_error("diffnet: corrupt checkpoint header in " + path);

  std::vector<int> widths{input};
  for (int i = 0; i < n_layers; ++i) widths.push_back(read_i32(f));
  DenseNet net;
  net.components = components;
  net.target_dim = target_dim;
  for (int i = 0; i < n_layers; ++i) {
    Layer l;
    l.weight = MatrixXd::Zero(widths[i + 1], widths[i]);
    l.bias = VectorXd::Zero(widths[i + 1]);
    l.act = (i + 1 == n_layers) ? Activation::Identity : Activation::Gelu;
    net.layers.push_back(std::move(l));
  }
  if (net.output_dim() != mixture_head_width(components, target_dim))
    throw std::runtime_error("diffnet: checkpoint head width disagrees with K/Dy in " + path);
  const std::int64_t n_params = read_i64(f);
  if (!f || n_params != net.param_count())
    throw std::runtime_error("diffnet: checkpoint parameter count mismatch in " + path);
  VectorXd flat(n_params);
  f.read(reinterpret_cast<char*>(flat.data()), n_params * 8);
  if (!f) throw std::runtime_error("diffnet: truncated checkpoint " + path);
  net.set_flat_params(flat);
  return net;
}

}  // namespace ngem
