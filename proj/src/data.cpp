#include "ngem/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ngem/rng.hpp"

namespace ngem {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Stream tags for deriving independent randomness from one user seed.
constexpr std::uint64_t kDataTag = 0x64617461;   // "data"
constexpr std::uint64_t kSplitTag = 0x73706c74;  // "splt"

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t key) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(key);
  rng.shuffle(idx);
  return idx;
}

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.x = gather_rows(d.x, rows);
  out.y = gather_rows(d.y, rows);
  out.x_names = d.x_names;
  out.y_names = d.y_names;
  out.norm = d.norm;
  out.truth = d.truth;
  return out;
}

}  // namespace

double GmmTruth::mean_nll(const MatrixXd& y) const {
  if (y.cols() != means.cols())
    throw std::invalid_argument("data: target dimension does not match the reference mixture");
  const int k_count = static_cast<int>(weights.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    VectorXd joint(k_count);
    for (int k = 0; k < k_count; ++k) {
      const double s = sigma[k];
      const double sq = (y.row(i) - means.row(k)).squaredNorm();
      joint[k] = std::log(weights[k]) -
                 means.cols() * (std::log(s) + kHalfLog2Pi) - 0.5 * sq / (s * s);
      best = std::max(best, joint[k]);
    }
    total += best + std::log((joint.array() - best).exp().sum());
  }
  return -total / static_cast<double>(y.rows());
}

Dataset gen_two_gaussians(std::int64_t n_per_mode, std::uint64_t seed) {
  if (n_per_mode < 1) throw std::invalid_argument("data: n_per_mode must be >= 1");
  const Eigen::Index n = 2 * n_per_mode;
  Dataset d;
  d.x = MatrixXd::Ones(n, 1);
  d.y.resize(n, 2);
  d.x_names = {"x0"};
  d.y_names = {"y0", "y1"};

  GmmTruth truth;
  truth.weights = VectorXd::Constant(2, 0.5);
  truth.means.resize(2, 2);
  truth.means << -2.0, -2.0, 2.0, 2.0;
  truth.sigma = VectorXd::Constant(2, 0.26);

  Rng rng(substream(seed, kDataTag));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int mode = i < n_per_mode ? 0 : 1;  // stratified: exactly half per mode
    d.y(i, 0) = truth.means(mode, 0) + truth.sigma[mode] * rng.normal();
    d.y(i, 1) = truth.means(mode, 1) + truth.sigma[mode] * rng.normal();
  }
  d.truth = std::move(truth);
  return take_rows(d, shuffled_indices(n, substream(seed, kDataTag + 1)));
}

double sinusoid_branch_mean(double x, int branch) {
  if (branch != 0 && branch != 1) throw std::invalid_argument("data: branch must be 0 or 1");
  return branch == 0 ? kPi * std::sin(x) : kPi * std::sin(x + kPi);
}

Dataset gen_two_sinusoids(std::int64_t n_per_mode, std::uint64_t seed) {
  if (n_per_mode < 1) throw std::invalid_argument("data: n_per_mode must be >= 1");
  const Eigen::Index n = 2 * n_per_mode;
  const double noise_sd = std::sqrt(0.1);  // N(0, 0.1) — 0.1 is the variance
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n, 1);
  d.x_names = {"x0"};
  d.y_names = {"y0"};
  Rng rng(substream(seed, kDataTag));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int branch = i < n_per_mode ? 0 : 1;
    const double x = rng.uniform(0.0, 4.0 * kPi);
    d.x(i, 0) = x;
    d.y(i, 0) = sinusoid_branch_mean(x, branch) + noise_sd * rng.normal();
  }
  return take_rows(d, shuffled_indices(n, substream(seed, kDataTag + 1)));
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string cell = line.substr(start, comma == std::string::npos ? comma : comma - start);
    // trim surrounding whitespace
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? std::string{} : cell.substr(a, b - a + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col,
                  const std::string& path) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{} || res.ptr != end)
    throw std::runtime_error("data: " + path + ": row " + std::to_string(row) + ", column " +
                             std::to_string(col + 1) + ": not a number: '" + cell + "'");
  return value;
}

void zscore(MatrixXd& m, VectorXd& mean, VectorXd& std) {
  mean = m.colwise().mean();
  m.rowwise() -= mean.transpose();
  std = (m.array().square().colwise().mean()).sqrt();
  for (Eigen::Index c = 0; c < std.size(); ++c)
    if (std[c] < 1e-12) std[c] = 1.0;  // constant column: leave it centered
  m.array().rowwise() /= std.transpose().array();
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& target_columns,
                 bool normalize) {
  if (target_columns.empty()) throw std::runtime_error("data: no target columns given");
  std::ifstream f(path);
  if (!f) throw std::runtime_error("data: cannot open " + path);

  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("data: " + path + " is empty");
  const std::vector<std::string> header = split_line(line);

  std::vector<int> y_of_col(header.size(), -1);
  for (std::size_t t = 0; t < target_columns.size(); ++t) {
    const auto it = std::find(header.begin(), header.end(), target_columns[t]);
    if (it == header.end())
      throw std::runtime_error("data: " + path + ": no column named '" + target_columns[t] + "'");
    const auto col = static_cast<std::size_t>(it - header.begin());
    if (y_of_col[col] != -1)
      throw std::runtime_error("data: duplicate target column '" + target_columns[t] + "'");
    y_of_col[col] = static_cast<int>(t);
  }
  if (target_columns.size() >= header.size())
    throw std::runtime_error("data: " + path + ": no feature columns left");

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(f, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("data: " + path + ": row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    std::vector<double> parsed(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) parsed[c] = parse_cell(cells[c], row_no, c, path);
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw std::runtime_error("data: " + path + " has no data rows");

  Dataset d;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  d.x.resize(n, static_cast<Eigen::Index>(header.size() - target_columns.size()));
  d.y.resize(n, static_cast<Eigen::Index>(target_columns.size()));
  for (std::size_t c = 0; c < header.size(); ++c)
    if (y_of_col[c] < 0) d.x_names.push_back(header[c]);
  d.y_names = target_columns;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index xc = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (y_of_col[c] >= 0)
        d.y(i, y_of_col[c]) = rows[static_cast<std::size_t>(i)][c];
      else
        d.x(i, xc++) = rows[static_cast<std::size_t>(i)][c];
    }
  }
  if (normalize) {
    NormStats s;
    zscore(d.x, s.x_mean, s.x_std);
    zscore(d.y, s.y_mean, s.y_std);
    d.norm = std::move(s);
  }
  return d;
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("data: cannot open " + path + " for writing");
  for (std::size_t c = 0; c < data.x_names.size(); ++c) f << (c ? "," : "") << data.x_names[c];
  for (const auto& name : data.y_names) f << ',' << name;
  f << '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data.x(i, c));
      f << (c ? "," : "") << buf;
    }
    for (Eigen::Index c = 0; c < data.y.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data.y(i, c));
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("data: short write to " + path);
}

TrainTestSplit split_dataset(const Dataset& data, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac <= 1.0))
    throw std::invalid_argument("data: train_frac must be in (0, 1]");
  const Eigen::Index n = data.size();
  const auto n_train = static_cast<Eigen::Index>(std::floor(train_frac * static_cast<double>(n)));
  if (n_train < 1) throw std::invalid_argument("data: split would leave an empty training set");
  const auto idx = shuffled_indices(n, substream(seed, kSplitTag));
  const std::vector<Eigen::Index> train_idx(idx.begin(), idx.begin() + n_train);
  const std::vector<Eigen::Index> test_idx(idx.begin() + n_train, idx.end());
  return {take_rows(data, train_idx), take_rows(data, test_idx)};
}

std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n, Eigen::Index batch_size,
                                                     std::uint64_t seed, std::int64_t epoch) {
  if (n < 1 || batch_size < 1) throw std::invalid_argument("data: empty batch plan");
  const auto idx = shuffled_indices(n, substream(seed, kDataTag + 2) + static_cast<std::uint64_t>(epoch));
  std::vector<std::vector<Eigen::Index>> batches;
  for (Eigen::Index at = 0; at < n; at += batch_size) {
    const Eigen::Index len = std::min(batch_size, n - at);
    batches.emplace_back(idx.begin() + at, idx.begin() + at + len);
  }
  return batches;
}

MatrixXd gather_rows(const MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace ngem
