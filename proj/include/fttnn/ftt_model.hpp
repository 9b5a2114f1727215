#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "fttnn/core_network.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/rng.hpp"

namespace fttnn {

/// Rank vector (1, r, ..., r, 1) for d cores.
inline std::vector<int> uniform_ranks(int d, int r) {
  if (d < 1) throw InvalidArgument("uniform_ranks: d must be >= 1");
  std::vector<int> ranks(d + 1, r);
  ranks.front() = 1;
  ranks.back() = 1;
  return ranks;
}

/// Functional tensor train: u(x) = u_1(x_1) u_2(x_2) ... u_d(x_d), core i of shape r_{i-1} x r_i.
class FTTModel {
 public:
  explicit FTTModel(std::vector<CoreNetwork> cores) : cores_(std::move(cores)) {
    if (cores_.empty()) throw InvalidArgument("FTTModel: needs at least one core");
    ranks_.push_back(cores_.front().rows());
    for (std::size_t i = 0; i < cores_.size(); ++i) {
      if (cores_[i].rows() != ranks_.back())
        throw InvalidArgument("FTTModel: core " + std::to_string(i) + " has " + std::to_string(cores_[i].rows()) +
                              " rows, expected " + std::to_string(ranks_.back()));
      ranks_.push_back(cores_[i].cols());
    }
    if (ranks_.front() != 1 || ranks_.back() != 1) throw InvalidArgument("FTTModel: boundary ranks must be 1");
  }

  /// Per-core seeds are derived from `seed`, so each core is reproducible independently.
  static FTTModel init(const std::vector<int>& ranks, const std::vector<int>& hidden, std::uint64_t seed,
                       InitScheme scheme = InitScheme::glorot_sine,
                       const std::vector<std::optional<Interval>>& boundaries = {}) {
    const int d = static_cast<int>(ranks.size()) - 1;
    if (d < 1) throw InvalidArgument("FTTModel::init: ranks must have length d + 1 >= 2");
    if (static_cast<int>(hidden.size()) != d) throw InvalidArgument("FTTModel::init: need one hidden size per core");
    if (!boundaries.empty() && static_cast<int>(boundaries.size()) != d)
      throw InvalidArgument("FTTModel::init: need one boundary entry per core");
    for (int r : ranks)
      if (r < 1) throw InvalidArgument("FTTModel::init: ranks must be >= 1");
    std::vector<CoreNetwork> cores;
    cores.reserve(d);
    for (int i = 0; i < d; ++i) {
      const auto bnd = boundaries.empty() ? std::nullopt : boundaries[i];
      cores.push_back(CoreNetwork::init(ranks[i], ranks[i + 1], hidden[i],
                                        derive_seed(seed, "core" + std::to_string(i)), scheme, bnd));
    }
    return FTTModel(std::move(cores));
  }

  static FTTModel init(const std::vector<int>& ranks, int hidden, std::uint64_t seed,
                       InitScheme scheme = InitScheme::glorot_sine,
                       const std::vector<std::optional<Interval>>& boundaries = {}) {
    return init(ranks, std::vector<int>(ranks.size() - 1, hidden), seed, scheme, boundaries);
  }

  int dim() const { return static_cast<int>(cores_.size()); }
  const std::vector<int>& ranks() const { return ranks_; }
  const std::vector<CoreNetwork>& cores() const { return cores_; }
  const CoreNetwork& core(int i) const { return cores_.at(i); }
  CoreNetwork& core(int i) { return cores_.at(i); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& c : cores_) n += c.param_count();
    return n;
  }

  /// Offset of core i's block in the flat parameter vector.
  std::size_t param_offset(int i) const {
    std::size_t n = 0;
    for (int k = 0; k < i; ++k) n += cores_[k].param_count();
    return n;
  }

  std::vector<double> get_params() const {
    std::vector<double> p(param_count());
    get_params(p);
    return p;
  }

  void get_params(std::span<double> out) const {
    if (out.size() != param_count()) throw InvalidArgument("FTTModel::get_params: size mismatch");
    std::size_t off = 0;
    for (const auto& c : cores_) {
      c.get_params(out.subspan(off, c.param_count()));
      off += c.param_count();
    }
  }

  void set_params(std::span<const double> in) {
    if (in.size() != param_count()) throw InvalidArgument("FTTModel::set_params: size mismatch");
    std::size_t off = 0;
    for (auto& c : cores_) {
      c.set_params(in.subspan(off, c.param_count()));
      off += c.param_count();
    }
  }

  bool same_shape(const FTTModel& other) const {
    if (ranks_ != other.ranks_) return false;
    for (int i = 0; i < dim(); ++i) {
      if (cores_[i].hidden() != other.cores_[i].hidden()) return false;
      if (cores_[i].boundary() != other.cores_[i].boundary()) return false;
    }
    return true;
  }

 private:
  std::vector<CoreNetwork> cores_;
  std::vector<int> ranks_;
};

namespace detail {

inline void check_point(const FTTModel& model, std::span<const double> x) {
  if (static_cast<int>(x.size()) != model.dim())
    throw InvalidArgument("point has dimension " + std::to_string(x.size()) + ", model has " +
                          std::to_string(model.dim()));
}

/// Left-to-right product of core derivative matrices at one point; orders[i] per core.
inline double chain_at(const FTTModel& model, std::span<const double> x, std::span<const int> orders) {
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
  for (int i = 0; i < model.dim(); ++i) v = v * model.core(i).eval(x[i], orders[i]);
  return v(0);
}

}  // namespace detail

inline double forward(const FTTModel& model, std::span<const double> x) {
  detail::check_point(model, x);
  const std::vector<int> orders(model.dim(), 0);
  return detail::chain_at(model, x, orders);
}

/// Sum over k of the chain with the k-th core differentiated twice.
inline double laplacian(const FTTModel& model, std::span<const double> x) {
  detail::check_point(model, x);
  const int d = model.dim();
  std::vector<Eigen::MatrixXd> v0(d), v2(d);
  for (int i = 0; i < d; ++i) {
    v0[i] = model.core(i).eval(x[i], 0);
    v2[i] = model.core(i).eval(x[i], 2);
  }
  double sum = 0.0;
  for (int k = 0; k < d; ++k) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
    for (int i = 0; i < d; ++i) v = v * (i == k ? v2[i] : v0[i]);
    sum += v(0);
  }
  return sum;
}

inline std::vector<double> gradient(const FTTModel& model, std::span<const double> x) {
  detail::check_point(model, x);
  const int d = model.dim();
  std::vector<double> g(d);
  std::vector<int> orders(d, 0);
  for (int k = 0; k < d; ++k) {
    orders[k] = 1;
    g[k] = detail::chain_at(model, x, orders);
    orders[k] = 0;
  }
  return g;
}

/// Values on the tensor grid nodes[0] x ... x nodes[d-1], row-major (last index fastest).
inline std::vector<double> eval_grid(const FTTModel& model, const std::vector<std::vector<double>>& nodes) {
  const int d = model.dim();
  if (static_cast<int>(nodes.size()) != d)
    throw InvalidArgument("eval_grid: got " + std::to_string(nodes.size()) + " node vectors for d = " +
                          std::to_string(d));
  double total = 1.0;
  for (const auto& n : nodes) {
    if (n.empty()) throw InvalidArgument("eval_grid: node vectors must be nonempty");
    total *= static_cast<double>(n.size());
  }
  if (total > 1e8) throw ResourceError("eval_grid: grid has more than 1e8 points");

  // state: P x r_i, rows enumerate the multi-index of dims < i in row-major order
  Eigen::MatrixXd state = Eigen::MatrixXd::Ones(1, 1);
  for (int i = 0; i < d; ++i) {
    const auto& core = model.core(i);
    const CoreBatch batch = core.evaluate(nodes[i], 0);
    const Eigen::Index n = batch.size();
    const Eigen::Index rows = state.rows();
    Eigen::MatrixXd next(rows * n, core.cols());
    Eigen::MatrixXd m(core.rows(), core.cols());
    for (Eigen::Index k = 0; k < n; ++k) {
      for (int a = 0; a < core.rows(); ++a)
        for (int b = 0; b < core.cols(); ++b) m(a, b) = batch.values[0](k, a * core.cols() + b);
      const Eigen::MatrixXd block = state * m;
      for (Eigen::Index p = 0; p < rows; ++p) next.row(p * n + k) = block.row(p);
    }
    state = std::move(next);
  }
  return std::vector<double>(state.data(), state.data() + state.size());
}

/// Values at scattered points, `points` row-major n x d. Cores are evaluated per dimension in one batch.
inline std::vector<double> eval_points(const FTTModel& model, std::span<const double> points) {
  const int d = model.dim();
  if (points.size() % d != 0) throw InvalidArgument("eval_points: size is not a multiple of d");
  const std::size_t n = points.size() / d;
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  Eigen::MatrixXd state = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1);
  std::vector<double> xs(n);
  for (int i = 0; i < d; ++i) {
    for (std::size_t p = 0; p < n; ++p) xs[p] = points[p * d + i];
    const auto& core = model.core(i);
    const CoreBatch batch = core.evaluate(xs, 0);
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), core.cols());
    for (int a = 0; a < core.rows(); ++a)
      for (int b = 0; b < core.cols(); ++b)
        next.col(b).array() += state.col(a).array() * batch.values[0].col(a * core.cols() + b).array();
    state = std::move(next);
  }
  for (std::size_t p = 0; p < n; ++p) out[p] = state(static_cast<Eigen::Index>(p), 0);
  return out;
}

/// Lower bound on the FTT-rank of `u`: TT-ranks of the tensor sampled on samples[0] x ... x samples[d-1].
///
/// Each unfolding's rank counts singular values above tol * sigma_max. The true
/// FTT-rank is a supremum over all samplings and may be infinite; this only
/// ever reports what the given sampling reveals.
inline std::vector<int> empirical_ftt_rank(const std::function<double(std::span<const double>)>& u,
                                           const std::vector<std::vector<double>>& samples, double tol = 1e-10) {
  const int d = static_cast<int>(samples.size());
  if (d < 1) throw InvalidArgument("empirical_ftt_rank: need at least one dimension");
  if (!(tol > 0.0)) throw InvalidArgument("empirical_ftt_rank: tol must be > 0");
  double total = 1.0;
  for (const auto& s : samples) {
    if (s.empty()) throw InvalidArgument("empirical_ftt_rank: sample sets must be nonempty");
    total *= static_cast<double>(s.size());
  }
  if (total > 1e7) throw ResourceError("empirical_ftt_rank: sampled tensor exceeds 1e7 entries");

  const auto count = static_cast<std::size_t>(total);
  std::vector<double> tensor(count);
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  for (std::size_t flat = 0; flat < count; ++flat) {
    for (int i = 0; i < d; ++i) x[i] = samples[i][idx[i]];
    tensor[flat] = u(x);
    for (int i = d - 1; i >= 0; --i) {
      if (++idx[i] < samples[i].size()) break;
      idx[i] = 0;
    }
  }

  std::vector<int> ranks(d + 1, 1);
  std::size_t rows = 1;
  for (int k = 1; k < d; ++k) {
    rows *= samples[k - 1].size();
    const std::size_t cols = count / rows;
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> unfolding(tensor.data(), static_cast<Eigen::Index>(rows),
                                             static_cast<Eigen::Index>(cols));
    const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(unfolding).singularValues();
    const double smax = sv.size() ? sv.maxCoeff() : 0.0;
    int rank = 0;
    if (smax > 0.0)
      for (Eigen::Index j = 0; j < sv.size(); ++j)
        if (sv[j] > tol * smax) ++rank;
    ranks[k] = rank;
  }
  return ranks;
}

}  // namespace fttnn
