#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

// Small dense feed-forward networks with reverse-mode gradients, sized for
// mixture-density heads.  Row = sample throughout: activations are B x width.

namespace ngem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { Gelu, Identity };

struct Layer {
  MatrixXd weight;  // fan_out x fan_in
  VectorXd bias;    // fan_out
  Activation act = Activation::Identity;
};

// Width of the raw head output for K components over a Dy-dimensional target:
// K mixture logits + K*Dy means + K*Dy scale pre-activations.
int mixture_head_width(int components, int target_dim);

struct DenseNet {
  std::vector<Layer> layers;
  int components = 0;  // K
  int target_dim = 0;  // Dy

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  std::int64_t param_count() const;
  VectorXd flat_params() const;                // layer-major: weight (col-major), then bias
  void set_flat_params(const VectorXd& flat);  // inverse of flat_params
};

// Per-layer buffers captured by forward() and consumed by backward().
// Reusable across calls; buffers are resized only when the batch shape changes.
struct ForwardTrace {
  MatrixXd input;                 // B x Dx
  std::vector<MatrixXd> pre;      // pre-activations, one per layer
  std::vector<MatrixXd> post;     // activations, one per layer (back() = raw output)
  std::vector<MatrixXd> gelu_cdf; // Phi(pre) for Gelu layers, cached for backward
  bool valid = false;
};

// Exact Gaussian-error-linear unit, x * Phi(x), and its derivative.
double gelu(double x);
double gelu_derivative(double x);

// Builds a net: layer_sizes = [input, hidden...], every listed transition uses
// Gelu, and a final Identity layer maps the last listed width onto the mixture
// head.  Weights are uniform on +-1/sqrt(fan_in) (the usual dense-layer
// default, which keeps deep-stack activations shrinking so the head emits
// near-zero raw values); biases start at zero except the head's scale block,
// which is offset so initial scales come out at 1.
DenseNet init_net(const std::vector<int>& layer_sizes, int components, int target_dim,
                  std::uint64_t seed);

// Runs the net over a batch; returns the raw head output (reference into the
// trace).  Throws std::invalid_argument on a feature-dimension mismatch.
const MatrixXd& forward(const DenseNet& net, const MatrixXd& x, ForwardTrace& trace);
MatrixXd forward(const DenseNet& net, const MatrixXd& x);

// Backpropagates d(loss)/d(raw output) through the trace and returns the flat
// parameter gradient, ordered exactly like flat_params().  Throws
// std::logic_error if the trace does not match the net / d_raw shape.
VectorXd backward(const DenseNet& net, const ForwardTrace& trace, const MatrixXd& d_raw);

// Binary checkpoint of the architecture + parameters (.mdn).  Endianness is
// fixed little-endian; files round-trip bit-exactly.
void save_net(const DenseNet& net, const std::string& path);
DenseNet load_net(const std::string& path);

}  // namespace ngem
