#include "ngem/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ngem/rng.hpp"

namespace ngem {
namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;  // "init"

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument("config: " + what);
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    config_error(key + ": not a number: '" + v + "'");
  return out;
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    config_error(key + ": not an integer: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  config_error(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string::npos ? comma : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "loss") {
    if (value == "nll") cfg.loss = LossKind::Nll;
    else if (value == "sgem") cfg.loss = LossKind::Sgem;
    else if (value == "ngem") cfg.loss = LossKind::Ngem;
    else config_error("loss must be nll|sgem|ngem, got '" + value + "'");
  } else if (key == "categorical_mode") {
    if (value == "analytic") cfg.categorical_mode = CategoricalMode::Analytic;
    else if (value == "reference") cfg.categorical_mode = CategoricalMode::Reference;
    else config_error("categorical_mode must be analytic|reference, got '" + value + "'");
  } else if (key == "optimizer") {
    if (value == "sgd") cfg.optimizer = OptimizerKind::Sgd;
    else if (value == "adam") cfg.optimizer = OptimizerKind::Adam;
    else config_error("optimizer must be sgd|adam, got '" + value + "'");
  } else if (key == "beta") {
    cfg.beta = parse_double(value, key);
  } else if (key == "components") {
    cfg.components = static_cast<int>(parse_int(value, key));
  } else if (key == "epochs") {
    cfg.epochs = parse_int(value, key);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_int(value, key);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(value, key));
  } else if (key == "dataset") {
    cfg.dataset = value;
  } else if (key == "n_per_mode") {
    cfg.n_per_mode = parse_int(value, key);
  } else if (key == "csv_path") {
    cfg.csv_path = value;
  } else if (key == "target_columns") {
    cfg.target_columns = split_list(value);
  } else if (key == "normalize") {
    cfg.normalize = parse_bool(value, key);
  } else if (key == "train_frac") {
    cfg.train_frac = parse_double(value, key);
  } else if (key == "hidden") {
    cfg.hidden.clear();
    for (const std::string& s : split_list(value))
      cfg.hidden.push_back(static_cast<int>(parse_int(s, key)));
  } else if (key == "direct_gmm") {
    cfg.direct_gmm = parse_bool(value, key);
  } else if (key == "eval_every") {
    cfg.eval_every = parse_int(value, key);
  } else if (key == "log_means") {
    cfg.log_means = parse_bool(value, key);
  } else {
    config_error("unknown key '" + key + "'");
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      config_error("line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void validate_config(const RunConfig& cfg) {
  if (!(cfg.beta > 0.0)) config_error("beta must be positive");
  if (cfg.components < 1) config_error("components must be >= 1");
  if (cfg.epochs < 1) config_error("epochs must be >= 1");
  if (cfg.batch_size < 1) config_error("batch_size must be >= 1");
  if (cfg.eval_every < 1) config_error("eval_every must be >= 1");
  if (!(cfg.train_frac > 0.0 && cfg.train_frac <= 1.0)) config_error("train_frac must be in (0, 1]");
  if (cfg.dataset != "two_gaussians" && cfg.dataset != "two_sinusoids" && cfg.dataset != "csv")
    config_error("dataset must be two_gaussians|two_sinusoids|csv, got '" + cfg.dataset + "'");
  if (cfg.dataset == "csv") {
    if (cfg.csv_path.empty()) config_error("dataset=csv requires csv_path");
    if (cfg.target_columns.empty()) config_error("dataset=csv requires target_columns");
  } else if (cfg.n_per_mode < 1) {
    config_error("n_per_mode must be >= 1");
  }
  if (cfg.direct_gmm && !cfg.hidden.empty())
    config_error("direct_gmm ignores the net; remove hidden sizes");
  for (int h : cfg.hidden)
    if (h < 1) config_error("hidden sizes must be >= 1");
}

Predictor Predictor::network(DenseNet net) {
  Predictor p;
  p.k_ = net.components;
  p.dy_ = net.target_dim;
  p.dx_ = net.input_dim();
  p.net_ = std::move(net);
  return p;
}

Predictor Predictor::direct(int components, int target_dim, int input_dim, VectorXd raw) {
  if (raw.size() != mixture_head_width(components, target_dim))
    throw std::invalid_argument("predictor: direct parameter size does not match K/Dy");
  Predictor p;
  p.k_ = components;
  p.dy_ = target_dim;
  p.dx_ = input_dim;
  p.raw_ = std::move(raw);
  return p;
}

const DenseNet& Predictor::net() const {
  if (is_direct()) throw std::logic_error("predictor: direct predictors have no net");
  return *net_;
}

std::int64_t Predictor::param_count() const {
  return is_direct() ? raw_.size() : net_->param_count();
}

VectorXd Predictor::params() const { return is_direct() ? raw_ : net_->flat_params(); }

void Predictor::set_params(const VectorXd& flat) {
  if (is_direct()) {
    if (flat.size() != raw_.size())
      throw std::invalid_argument("predictor: flat parameter size mismatch");
    raw_ = flat;
  } else {
    net_->set_flat_params(flat);
  }
}

MatrixXd Predictor::raw_output(const MatrixXd& x, ForwardTrace& trace) const {
  if (x.cols() != dx_)
    throw std::invalid_argument("predictor: input feature dimension mismatch");
  if (is_direct()) return raw_.transpose().replicate(x.rows(), 1);
  return forward(*net_, x, trace);
}

MixtureParams Predictor::transform(const MatrixXd& raw) const {
  if (!is_direct()) return head_transform(raw, k_, dy_);
  if (raw.cols() != mixture_head_width(k_, dy_))
    throw std::invalid_argument("predictor: raw width does not match K/Dy");
  const int kd = k_ * dy_;
  MixtureParams p;
  p.components = k_;
  p.target_dim = dy_;
  p.logits = raw.leftCols(k_);
  p.means = raw.middleCols(k_, kd);
  p.scales = raw.rightCols(kd);
  return p;
}

VectorXd Predictor::grad(const ForwardTrace& trace, const MixtureParams& params,
                         const DistGradients& dist, Eigen::Index batch) const {
  const double inv_b = 1.0 / static_cast<double>(batch);
  if (is_direct()) {
    const int kd = k_ * dy_;
    VectorXd out(raw_.size());
    out.head(k_) = dist.d_logits.colwise().sum().transpose() * inv_b;
    out.segment(k_, kd) = dist.d_means.colwise().sum().transpose() * inv_b;
    out.tail(kd) = dist.d_scales.colwise().sum().transpose() * inv_b;
    return out;
  }
  return backward(*net_, trace, head_backward(params, dist) * inv_b);
}

MixtureParams Predictor::predict(const MatrixXd& x) const {
  ForwardTrace trace;
  return transform(raw_output(x, trace));
}

double entropy(const VectorXd& weights) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) h -= weights[i] * std::log(weights[i]);
  return h;
}

double rmse_min(const MixtureParams& params, const MatrixXd& y) {
  if (y.rows() != params.batch() || y.cols() != params.target_dim)
    throw std::invalid_argument("harness: rmse_min target shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < params.components; ++k) {
      double sq = 0.0;
      for (int d = 0; d < params.target_dim; ++d) {
        const double diff = params.means(i, k * params.target_dim + d) - y(i, d);
        sq += diff * diff;
      }
      best = std::min(best, sq);
    }
    total += best;
  }
  return std::sqrt(total / static_cast<double>(y.rows()));
}

namespace {

// Shared state of one training run; benchmark_overhead drives it too.
struct Trainer {
  RunConfig cfg;
  Dataset train_data, eval_data;
  double truth_nll = std::numeric_limits<double>::quiet_NaN();
  Predictor model;
  VectorXd theta;
  OptimizerState opt;
  ForwardTrace trace;
  std::int64_t iteration = 0;
  double wall_seconds = 0.0;

  explicit Trainer(const RunConfig& c) : cfg(c) {
    validate_config(cfg);

    Dataset full;
    if (cfg.dataset == "two_gaussians")
      full = gen_two_gaussians(cfg.n_per_mode, cfg.seed);
    else if (cfg.dataset == "two_sinusoids")
      full = gen_two_sinusoids(cfg.n_per_mode, cfg.seed);
    else
      full = load_csv(cfg.csv_path, cfg.target_columns, cfg.normalize);

    if (cfg.train_frac < 1.0) {
      TrainTestSplit split = split_dataset(full, cfg.train_frac, cfg.seed);
      train_data = std::move(split.train);
      eval_data = split.test.size() > 0 ? std::move(split.test) : train_data;
    } else {
      train_data = std::move(full);
      eval_data = train_data;
    }
    if (eval_data.truth) truth_nll = eval_data.truth->mean_nll(eval_data.y);

    const int dx = train_data.feature_dim();
    const int dy = train_data.target_dim();
    const std::uint64_t init_seed = substream(cfg.seed, kInitTag);
    if (cfg.direct_gmm) {
      // Uniform logits, standard-normal means, unit scales (stored directly).
      const int width = mixture_head_width(cfg.components, dy);
      VectorXd raw = VectorXd::Zero(width);
      Rng rng(init_seed);
      for (int i = 0; i < cfg.components * dy; ++i) raw[cfg.components + i] = rng.normal();
      raw.tail(cfg.components * dy).setOnes();
      model = Predictor::direct(cfg.components, dy, dx, std::move(raw));
    } else {
      std::vector<int> sizes{dx};
      sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
      model = Predictor::network(init_net(sizes, cfg.components, dy, init_seed));
    }
    theta = model.params();
    opt = cfg.optimizer == OptimizerKind::Sgd
              ? OptimizerState::sgd(cfg.beta)
              : OptimizerState::adam(cfg.beta, model.param_count());
  }

  double loss_of(const MixtureParams& p, const Responsibilities& resp, const MatrixXd& y) const {
    switch (cfg.loss) {
      case LossKind::Nll: return nll_loss(p, y);
      case LossKind::Sgem: return sgem_loss(p, resp, y);
      default: return ngem_loss(p, resp, y);
    }
  }

  // One optimizer update on the given rows.  Returns the pre-update batch
  // loss; a non-finite loss leaves the parameters untouched.
  double step(const std::vector<Eigen::Index>& batch) {
    const auto t0 = Clock::now();
    const MatrixXd xb = gather_rows(train_data.x, batch);
    const MatrixXd yb = gather_rows(train_data.y, batch);
    const MixtureParams p = model.transform(model.raw_output(xb, trace));
    const Responsibilities resp = responsibilities(p, yb);
    const double loss = loss_of(p, resp, yb);
    if (!std::isfinite(loss)) return loss;

    const DistGradients g = cfg.loss == LossKind::Ngem
                                ? natural_gradient(p, resp, yb, cfg.categorical_mode)
                                : dist_gradients(p, resp, yb);
    const VectorXd flat = model.grad(trace, p, g, static_cast<Eigen::Index>(batch.size()));
    optimizer_step(theta, flat, opt);
    model.set_params(theta);
    iteration += 1;
    wall_seconds += seconds_since(t0);
    return loss;
  }

  double full_train_loss() {
    const MixtureParams p = model.predict(train_data.x);
    return loss_of(p, responsibilities(p, train_data.y), train_data.y);
  }

  MetricsRecord measure(double train_loss) const {
    const MixtureParams p = model.predict(eval_data.x);
    MetricsRecord r;
    r.iteration = iteration;
    r.train_loss = train_loss;
    r.test_nll = nll_loss(p, eval_data.y);
    const VectorXd mean_weights = p.weights().colwise().mean();
    r.entropy = entropy(mean_weights);
    r.rmse_min = rmse_min(p, eval_data.y);
    r.wall_ms = wall_seconds * 1e3;
    if (cfg.log_means) {
      const Eigen::RowVectorXd mm = p.means.colwise().mean();
      r.component_means.assign(mm.data(), mm.data() + mm.size());
    }
    return r;
  }
};

}  // namespace

TrainResult train(const RunConfig& cfg) {
  Trainer tr(cfg);
  TrainResult out;
  out.metrics.push_back(tr.measure(tr.full_train_loss()));

  double last_loss = out.metrics.front().train_loss;
  for (std::int64_t epoch = 0; epoch < cfg.epochs && !out.abort; ++epoch) {
    for (const auto& batch :
         epoch_batches(tr.train_data.size(), cfg.batch_size, cfg.seed, epoch)) {
      const double loss = tr.step(batch);
      if (!std::isfinite(loss)) {
        out.abort = AbortDiagnostic{tr.iteration, "loss"};
        break;
      }
      last_loss = loss;
      if (tr.iteration % cfg.eval_every == 0) {
        if (!tr.theta.allFinite()) {
          out.abort = AbortDiagnostic{tr.iteration, "params"};
          break;
        }
        out.metrics.push_back(tr.measure(loss));
      }
    }
  }
  if (!out.abort && out.metrics.back().iteration != tr.iteration)
    out.metrics.push_back(tr.measure(last_loss));

  out.model = std::move(tr.model);
  out.eval_data = std::move(tr.eval_data);
  out.truth_nll = tr.truth_nll;
  return out;
}

std::pair<double, double> benchmark_overhead(const RunConfig& cfg, std::int64_t updates,
                                             std::int64_t warmup) {
  if (updates < 1 || warmup < 0) throw std::invalid_argument("benchmark: bad update counts");
  double elapsed[2] = {0.0, 0.0};
  const LossKind kinds[2] = {LossKind::Ngem, LossKind::Nll};
  for (int which = 0; which < 2; ++which) {
    RunConfig c = cfg;
    c.loss = kinds[which];
    Trainer tr(c);
    std::int64_t done = 0;
    double at_warmup = 0.0;
    for (std::int64_t epoch = 0; done < warmup + updates; ++epoch) {
      for (const auto& batch :
           epoch_batches(tr.train_data.size(), c.batch_size, c.seed, epoch)) {
        const double loss = tr.step(batch);
        if (!std::isfinite(loss))
          throw std::runtime_error("benchmark: loss diverged; pick a tamer config");
        if (++done == warmup) at_warmup = tr.wall_seconds;
        if (done == warmup + updates) break;
      }
    }
    elapsed[which] = tr.wall_seconds - at_warmup;
  }
  return {elapsed[0], elapsed[1]};
}

namespace {

void append_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

void emit_csv(const std::vector<MetricsRecord>& metrics, const std::string& path) {
  const std::size_t n_means = metrics.empty() ? 0 : metrics.front().component_means.size();
  std::string out = "iteration,train_loss,test_nll,entropy,rmse_min,wall_ms";
  for (std::size_t i = 0; i < n_means; ++i) out += ",mu" + std::to_string(i);
  out += '\n';
  for (const MetricsRecord& r : metrics) {
    if (r.component_means.size() != n_means)
      throw std::invalid_argument("metrics: inconsistent component-mean columns");
    out += std::to_string(r.iteration);
    for (double v : {r.train_loss, r.test_nll, r.entropy, r.rmse_min, r.wall_ms}) {
      out += ',';
      append_g17(out, v);
    }
    for (double v : r.component_means) {
      out += ',';
      append_g17(out, v);
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);  // binary: no newline translation
  if (!f) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  f << out;
  if (!f) throw std::runtime_error("metrics: short write to " + path);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("metrics: " + path + " is empty");
  if (line.rfind("iteration,train_loss,test_nll,entropy,rmse_min,wall_ms", 0) != 0)
    throw std::runtime_error("metrics: unexpected header in " + path);

  std::vector<MetricsRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::size_t start = 0;
    while (start <= line.size()) {
      const auto comma = line.find(',', start);
      const std::string cell =
          line.substr(start, comma == std::string::npos ? comma : comma - start);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw std::runtime_error("metrics: bad cell '" + cell + "' in " + path);
      vals.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (vals.size() < 6) throw std::runtime_error("metrics: short row in " + path);
    MetricsRecord r;
    r.iteration = static_cast<std::int64_t>(vals[0]);
    r.train_loss = vals[1];
    r.test_nll = vals[2];
    r.entropy = vals[3];
    r.rmse_min = vals[4];
    r.wall_ms = vals[5];
    r.component_means.assign(vals.begin() + 6, vals.end());
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'D', 'N', '1'};

}  // namespace

void save_checkpoint(const Predictor& model, const std::string& path) {
  if (!model.is_direct()) {
    save_net(model.net(), path);  // same container format, n_layers >= 1
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, 4);
  const std::int32_t header[4] = {model.components(), model.target_dim(), 0, model.input_dim()};
  f.write(reinterpret_cast<const char*>(header), sizeof header);
  const VectorXd raw = model.params();
  const std::int64_t n = raw.size();
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(raw.data()), n * 8);
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Predictor load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  std::int32_t header[4];
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(header), sizeof header);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  if (header[2] > 0) {
    f.close();
    return Predictor::network(load_net(path));
  }
  const std::int32_t components = header[0], target_dim = header[1], input_dim = header[3];
  std::int64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  if (!f || n != mixture_head_width(components, target_dim))
    throw std::runtime_error("checkpoint: corrupt header in " + path);
  VectorXd raw(n);
  f.read(reinterpret_cast<char*>(raw.data()), n * 8);
  if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
  return Predictor::direct(components, target_dim, input_dim, std::move(raw));
}

}  // namespace ngem
