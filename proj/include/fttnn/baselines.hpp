#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fttnn/domain.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/parallel.hpp"
#include "fttnn/problems.hpp"
#include "fttnn/rng.hpp"

namespace fttnn {

// ---------------------------------------------------------------------------
// Discrete tensor train

/// Core i has shape r_i x n_i x r_{i+1}, stored at (a * n_i + k) * r_{i+1} + b.
struct TTTensor {
  std::vector<int> shape;
  std::vector<int> ranks;
  std::vector<std::vector<double>> cores;

  int dim() const { return static_cast<int>(shape.size()); }

  void validate() const {
    const int d = dim();
    if (d < 1) throw InvalidArgument("TTTensor: dimension must be >= 1");
    if (static_cast<int>(ranks.size()) != d + 1 || ranks.front() != 1 || ranks.back() != 1)
      throw InvalidArgument("TTTensor: ranks must have length d + 1 with boundary ranks 1");
    if (static_cast<int>(cores.size()) != d) throw InvalidArgument("TTTensor: need one core per dimension");
    for (int i = 0; i < d; ++i) {
      if (shape[i] < 1 || ranks[i + 1] < 1) throw InvalidArgument("TTTensor: sizes and ranks must be >= 1");
      if (cores[i].size() != static_cast<std::size_t>(ranks[i]) * shape[i] * ranks[i + 1])
        throw InvalidArgument("TTTensor: core " + std::to_string(i) + " has the wrong size");
    }
  }

  double& at(int core, int a, int k, int b) { return cores[core][(a * shape[core] + k) * ranks[core + 1] + b]; }
  double at(int core, int a, int k, int b) const { return cores[core][(a * shape[core] + k) * ranks[core + 1] + b]; }

  /// Entries drawn i.i.d. N(0, 1/r_{i+1}).
  static TTTensor random(std::vector<int> shape, std::vector<int> ranks, std::uint64_t seed) {
    TTTensor t{std::move(shape), std::move(ranks), {}};
    const int d = t.dim();
    if (static_cast<int>(t.ranks.size()) != d + 1) throw InvalidArgument("TTTensor: ranks must have length d + 1");
    Rng rng(seed);
    for (int i = 0; i < d; ++i) {
      std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(t.ranks[i + 1])));
      t.cores.emplace_back(static_cast<std::size_t>(t.ranks[i]) * t.shape[i] * t.ranks[i + 1]);
      for (auto& v : t.cores.back()) v = n(rng);
    }
    t.validate();
    return t;
  }
};

/// G_1(:, i_1, :) G_2(:, i_2, :) ... G_d(:, i_d, :).
inline double tt_entry(const TTTensor& t, std::span<const int> index) {
  const int d = t.dim();
  if (static_cast<int>(index.size()) != d) throw InvalidArgument("tt_entry: index has the wrong length");
  std::vector<double> v{1.0}, next;
  for (int i = 0; i < d; ++i) {
    if (index[i] < 0 || index[i] >= t.shape[i])
      throw InvalidArgument("tt_entry: index " + std::to_string(index[i]) + " out of range in dimension " +
                            std::to_string(i));
    next.assign(t.ranks[i + 1], 0.0);
    for (int a = 0; a < t.ranks[i]; ++a)
      for (int b = 0; b < t.ranks[i + 1]; ++b) next[b] += v[a] * t.at(i, a, index[i], b);
    v.swap(next);
  }
  return v[0];
}

struct AlsOptions {
  int sweeps = 30;
  double ridge = 1e-10;
  std::uint64_t seed = 0;
  double rmse_tol = 0.0;  // stop after a sweep once the observed RMSE falls below this
};

struct AlsResult {
  TTTensor tensor;
  std::vector<double> rmse;  // observed-entry RMSE: initial, then after every half-sweep
  int sweeps = 0;
  std::vector<std::string> warnings;
};

/// Observed-entry RMSE; `indices` is row-major (count x d).
inline double observed_rmse(const TTTensor& t, std::span<const int> indices, std::span<const double> values) {
  const std::size_t d = static_cast<std::size_t>(t.dim());
  double sse = 0.0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    const double e = tt_entry(t, indices.subspan(p * d, d)) - values[p];
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(values.size()));
}

/// Tensor completion by alternating ridge least squares over cores, sweeping
/// left-to-right then right-to-left. Each slice G_i(:, k, :) is solved from the
/// observations whose i-th index is k; slices with fewer observations than
/// unknowns keep their previous values and add a warning, and a solved slice is
/// kept only if it does not raise the squared error on its observations.
inline AlsResult tt_als_complete(std::span<const int> indices, std::span<const double> values, std::vector<int> shape,
                                 std::vector<int> ranks, const AlsOptions& opt = {}) {
  const int d = static_cast<int>(shape.size());
  if (d < 1) throw InvalidArgument("tt_als_complete: empty grid shape");
  if (values.empty()) throw InvalidArgument("tt_als_complete: no observed entries");
  if (indices.size() != values.size() * static_cast<std::size_t>(d))
    throw InvalidArgument("tt_als_complete: indices and values disagree in size");
  if (opt.sweeps < 0 || opt.ridge < 0) throw InvalidArgument("tt_als_complete: sweeps and ridge must be >= 0");
  if (static_cast<int>(ranks.size()) != d + 1 || ranks.front() != 1 || ranks.back() != 1)
    throw InvalidArgument("tt_als_complete: ranks must have length d + 1 with boundary ranks 1");
  for (int i = 1; i < d; ++i) {
    double left = 1.0, right = 1.0;
    for (int j = 0; j < i; ++j) left *= shape[j];
    for (int j = i; j < d; ++j) right *= shape[j];
    if (ranks[i] < 1 || ranks[i] > left || ranks[i] > right)
      throw InvalidArgument("tt_als_complete: rank " + std::to_string(ranks[i]) + " at position " + std::to_string(i) +
                            " is infeasible for the grid");
  }
  for (std::size_t p = 0; p < indices.size(); ++p)
    if (indices[p] < 0 || indices[p] >= shape[p % d]) throw InvalidArgument("tt_als_complete: index out of range");

  AlsResult res{TTTensor::random(std::move(shape), std::move(ranks), derive_seed(opt.seed, "als")), {}, 0, {}};
  TTTensor& t = res.tensor;
  const std::size_t n_obs = values.size();
  const auto ud = static_cast<std::size_t>(d);

  // Row vector of cores 0..i-1 (left) and column vector of cores i+1..d-1 (right) at one observation.
  auto partial = [&](std::size_t p, int from, int to) {
    std::vector<double> v{1.0}, next;
    for (int i = from; i < to; ++i) {
      const int k = indices[p * ud + i];
      next.assign(t.ranks[i + 1], 0.0);
      for (int a = 0; a < t.ranks[i]; ++a)
        for (int b = 0; b < t.ranks[i + 1]; ++b) next[b] += v[a] * t.at(i, a, k, b);
      v.swap(next);
    }
    return v;
  };
  auto partial_right = [&](std::size_t p, int from) {
    std::vector<double> v{1.0}, next;
    for (int i = d - 1; i > from; --i) {
      const int k = indices[p * ud + i];
      next.assign(t.ranks[i], 0.0);
      for (int a = 0; a < t.ranks[i]; ++a)
        for (int b = 0; b < t.ranks[i + 1]; ++b) next[a] += t.at(i, a, k, b) * v[b];
      v.swap(next);
    }
    return v;
  };

  auto update_core = [&](int i) {
    const int r0 = t.ranks[i], r1 = t.ranks[i + 1], n = t.shape[i];
    const int m = r0 * r1;
    std::vector<Eigen::MatrixXd> gram(n, Eigen::MatrixXd::Zero(m, m));
    std::vector<Eigen::VectorXd> rhs(n, Eigen::VectorXd::Zero(m));
    std::vector<std::vector<std::size_t>> members(n);
    Eigen::MatrixXd phi(static_cast<Eigen::Index>(n_obs), m);
    for (std::size_t p = 0; p < n_obs; ++p) {
      const auto l = partial(p, 0, i);
      const auto r = partial_right(p, i);
      const auto row = static_cast<Eigen::Index>(p);
      for (int a = 0; a < r0; ++a)
        for (int b = 0; b < r1; ++b) phi(row, a * r1 + b) = l[a] * r[b];
      const int k = indices[p * ud + i];
      gram[k].selfadjointView<Eigen::Lower>().rankUpdate(phi.row(row).transpose());
      rhs[k] += values[p] * phi.row(row).transpose();
      members[k].push_back(p);
    }
    for (int k = 0; k < n; ++k) {
      const auto cnt = static_cast<int>(members[k].size());
      if (cnt < m) {
        res.warnings.push_back("core " + std::to_string(i) + " slice " + std::to_string(k) + ": " +
                               std::to_string(cnt) + " observations for " + std::to_string(m) +
                               " unknowns, keeping previous values");
        continue;
      }
      Eigen::MatrixXd a = gram[k].selfadjointView<Eigen::Lower>();
      a.diagonal().array() += opt.ridge;
      const Eigen::VectorXd g = a.ldlt().solve(rhs[k]);
      if (!g.allFinite()) throw NumericalFailure("tt_als_complete: non-finite slice solution");
      Eigen::VectorXd old(m);
      for (int a0 = 0; a0 < r0; ++a0)
        for (int b = 0; b < r1; ++b) old[a0 * r1 + b] = t.at(i, a0, k, b);
      // The ridge can trade a tiny rise in squared error for a smaller slice norm; keep the old slice then.
      double sse_new = 0.0, sse_old = 0.0;
      for (std::size_t p : members[k]) {
        const auto row = static_cast<Eigen::Index>(p);
        sse_new += std::pow(phi.row(row).dot(g) - values[p], 2);
        sse_old += std::pow(phi.row(row).dot(old) - values[p], 2);
      }
      if (sse_new > sse_old) continue;
      for (int a0 = 0; a0 < r0; ++a0)
        for (int b = 0; b < r1; ++b) t.at(i, a0, k, b) = g[a0 * r1 + b];
    }
  };

  res.rmse.push_back(observed_rmse(t, indices, values));
  for (int s = 0; s < opt.sweeps; ++s) {
    for (int i = 0; i < d; ++i) update_core(i);
    res.rmse.push_back(observed_rmse(t, indices, values));
    for (int i = d - 1; i >= 0; --i) update_core(i);
    res.rmse.push_back(observed_rmse(t, indices, values));
    res.sweeps = s + 1;
    if (res.rmse.back() < opt.rmse_tol) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Monte-Carlo baselines

/// u(x) = (W2 sin(W1 x + b1) + b2) * prod_i (x_i - a_i)(b_i - x_i), the product
/// factor present only when a box is set. Parameters: W1 (h x d, row-major), b1, W2, b2.
class MCNet {
 public:
  MCNet(int dim, int hidden, std::optional<Box> box = std::nullopt)
      : d_(dim), h_(hidden), box_(std::move(box)), params_(param_count(dim, hidden), 0.0) {
    if (dim < 1 || hidden < 1) throw InvalidArgument("MCNet: dim and hidden must be >= 1");
    if (box_ && static_cast<int>(box_->size()) != dim) throw InvalidArgument("MCNet: box dimension mismatch");
  }

  /// Glorot-uniform, input weights scaled by pi, hidden biases U(-1, 1), output bias zero.
  static MCNet init(int dim, int hidden, std::uint64_t seed, std::optional<Box> box = std::nullopt) {
    MCNet net(dim, hidden, std::move(box));
    Rng rng(seed);
    const double lim1 = std::numbers::pi * std::sqrt(6.0 / (dim + hidden));
    const double lim2 = std::sqrt(6.0 / (hidden + 1.0));
    std::uniform_real_distribution<double> u1(-lim1, lim1), ub(-1.0, 1.0), u2(-lim2, lim2);
    for (int j = 0; j < hidden * dim; ++j) net.params_[j] = u1(rng);
    for (int j = 0; j < hidden; ++j) net.params_[net.b1_off() + j] = ub(rng);
    for (int j = 0; j < hidden; ++j) net.params_[net.w2_off() + j] = u2(rng);
    return net;
  }

  static std::size_t param_count(int dim, int hidden) {
    return static_cast<std::size_t>(hidden) * dim + 2 * static_cast<std::size_t>(hidden) + 1;
  }

  int dim() const { return d_; }
  int hidden() const { return h_; }
  const std::optional<Box>& box() const { return box_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }

  void set_params(std::span<const double> p) {
    if (p.size() != params_.size()) throw InvalidArgument("MCNet: parameter count mismatch");
    params_.assign(p.begin(), p.end());
  }

  double w1(int j, int k) const { return params_[j * d_ + k]; }
  double& w1(int j, int k) { return params_[j * d_ + k]; }
  double& b1(int j) { return params_[b1_off() + j]; }
  double& w2(int j) { return params_[w2_off() + j]; }
  double& b2() { return params_.back(); }

  /// Network value, gradient and Laplacian at one point, plus what backward() needs.
  struct Local {
    std::vector<double> s, c, x;
    double n = 0, lap_n = 0, bf = 1, lap_b = 0;
    std::vector<double> grad_n, grad_b;

    double u() const { return n * bf; }
    double grad_u(int k) const { return bf * grad_n[k] + n * grad_b[k]; }
    double lap_u() const {
      double dot = 0;
      for (std::size_t k = 0; k < grad_n.size(); ++k) dot += grad_n[k] * grad_b[k];
      return bf * lap_n + 2 * dot + n * lap_b;
    }
  };

  Local local(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d_) throw InvalidArgument("MCNet: point has the wrong dimension");
    Local L;
    L.x.assign(x.begin(), x.end());
    L.s.resize(h_);
    L.c.resize(h_);
    L.grad_n.assign(d_, 0.0);
    L.grad_b.assign(d_, 0.0);
    L.n = params_.back();
    for (int j = 0; j < h_; ++j) {
      double z = params_[b1_off() + j], nrm = 0;
      for (int k = 0; k < d_; ++k) {
        z += w1(j, k) * x[k];
        nrm += w1(j, k) * w1(j, k);
      }
      L.s[j] = std::sin(z);
      L.c[j] = std::cos(z);
      const double w = params_[w2_off() + j];
      L.n += w * L.s[j];
      L.lap_n -= w * L.s[j] * nrm;
      for (int k = 0; k < d_; ++k) L.grad_n[k] += w * L.c[j] * w1(j, k);
    }
    if (box_) {
      // beta_i = (x - a)(b - x); products excluding one factor via prefix and suffix.
      std::vector<double> beta(d_), dbeta(d_), pre(d_ + 1, 1.0), suf(d_ + 1, 1.0);
      for (int k = 0; k < d_; ++k) {
        const auto& iv = (*box_)[k];
        beta[k] = (x[k] - iv.a) * (iv.b - x[k]);
        dbeta[k] = iv.a + iv.b - 2 * x[k];
      }
      for (int k = 0; k < d_; ++k) pre[k + 1] = pre[k] * beta[k];
      for (int k = d_ - 1; k >= 0; --k) suf[k] = suf[k + 1] * beta[k];
      L.bf = pre[d_];
      for (int k = 0; k < d_; ++k) {
        const double others = pre[k] * suf[k + 1];
        L.grad_b[k] = dbeta[k] * others;
        L.lap_b += -2.0 * others;
      }
    }
    return L;
  }

  double operator()(std::span<const double> x) const { return local(x).u(); }

  /// grad += d/dtheta [a0 * N + sum_k a_k dN/dx_k + g * Laplacian(N)] at L.x.
  void backward(const Local& L, double a0, std::span<const double> a, double g, std::span<double> grad) const {
    const std::size_t b1o = b1_off(), w2o = w2_off();
    for (int j = 0; j < h_; ++j) {
      double aw = 0, nrm = 0;
      for (int k = 0; k < d_; ++k) {
        aw += a[k] * w1(j, k);
        nrm += w1(j, k) * w1(j, k);
      }
      const double s = L.s[j], c = L.c[j], w = params_[w2o + j];
      grad[w2o + j] += a0 * s + c * aw - g * s * nrm;
      const double t = a0 * c - s * aw - g * c * nrm;
      grad[b1o + j] += w * t;
      for (int k = 0; k < d_; ++k) grad[j * d_ + k] += w * (t * L.x[k] + c * a[k] - 2 * g * s * w1(j, k));
    }
    grad[params_.size() - 1] += a0;
  }

 private:
  std::size_t b1_off() const { return static_cast<std::size_t>(h_) * d_; }
  std::size_t w2_off() const { return b1_off() + h_; }

  int d_, h_;
  std::optional<Box> box_;
  std::vector<double> params_;
};

/// Hard-factor box for a single-box problem with hard boundary conditions.
inline std::optional<Box> mc_hard_box(const ProblemSpec& s) {
  if (!s.boundary.hard || s.kind == ProblemKind::supervised) return std::nullopt;
  if (s.domain.boxes().size() != 1) throw UnsupportedProblem(s.name + ": hard boundary factor needs a single box");
  return s.domain.boxes().front();
}

inline MCNet make_mc_net(const ProblemSpec& s, std::uint64_t seed) {
  return MCNet::init(s.dim(), s.baseline.hidden, derive_seed(seed, "init"), mc_hard_box(s));
}

/// n points uniform in the domain (rejection from the bounding box), row-major.
inline std::vector<double> sample_domain(const BoxDomain& domain, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample_domain: need at least one sample");
  const int d = domain.dim();
  auto rng = make_rng(seed, "samples");
  std::vector<std::uniform_real_distribution<double>> dist;
  for (const auto& iv : domain.bounding_box()) dist.emplace_back(iv.a, iv.b);
  std::vector<double> pts, x(d);
  pts.reserve(n * d);
  while (pts.size() < n * d) {
    for (int i = 0; i < d; ++i) x[i] = dist[i](rng);
    if (domain.contains(x)) pts.insert(pts.end(), x.begin(), x.end());
  }
  return pts;
}

namespace detail {
inline constexpr std::size_t kMcChunk = 1024;
}

/// PINN loss: |Omega| * mean((-c1 Lap u + b u - f)^2) over a fixed sample set, plus
/// beta * the rectangle-rule boundary mismatch when the boundary is soft.
class McResidualObjective {
 public:
  McResidualObjective(const ProblemSpec& s, std::size_t n_samples, std::uint64_t seed)
      : d_(s.dim()), c1_(s.c1), volume_(s.domain.volume()), points_(sample_domain(s.domain, n_samples, seed)) {
    if (s.kind != ProblemKind::elliptic) throw InvalidArgument(s.name + ": PINN residual needs an elliptic problem");
    const std::size_t n = n_samples;
    f_.resize(n);
    b_.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto x = point(p);
      f_[p] = s.f.empty() ? 0.0 : s.f(x);
      if (!s.b.empty()) b_[p] = s.b(x);
    }
    if (!s.boundary.hard) {
      beta_ = s.boundary.beta;
      for (const auto& r : boundary_regions(s.domain, s.boundary.dx)) {
        std::vector<std::size_t> idx(d_, 0);
        std::vector<double> x(d_);
        while (true) {
          double w = 1.0;
          for (int i = 0; i < d_; ++i) {
            x[i] = r.rules[i].nodes[idx[i]];
            w *= r.rules[i].weights[idx[i]];
          }
          bnd_points_.insert(bnd_points_.end(), x.begin(), x.end());
          bnd_weights_.push_back(w);
          bnd_g_.push_back(s.boundary.g.empty() ? 0.0 : s.boundary.g(x));
          int i = d_ - 1;
          for (; i >= 0; --i) {
            if (++idx[i] < r.rules[i].size()) break;
            idx[i] = 0;
          }
          if (i < 0) break;
        }
      }
    }
  }

  std::size_t samples() const { return f_.size(); }
  std::span<const double> point(std::size_t p) const { return std::span<const double>(points_).subspan(p * d_, d_); }

  /// Plain sample mean of the squared residual.
  double residual_mean(const MCNet& net) const { return interior(net, {}) / static_cast<double>(samples()); }

  double evaluate(const MCNet& net, std::span<double> grad) const {
    if (net.dim() != d_) throw InvalidArgument("PINN: network dimension mismatch");
    if (!grad.empty()) {
      if (grad.size() != net.param_count()) throw InvalidArgument("PINN: gradient size mismatch");
      std::fill(grad.begin(), grad.end(), 0.0);
    }
    const double scale = volume_ / static_cast<double>(samples());
    double loss = scale * interior(net, grad, scale);
    for (std::size_t p = 0; p < bnd_weights_.size(); ++p) {
      const auto x = std::span<const double>(bnd_points_).subspan(p * d_, d_);
      const auto L = net.local(x);
      const double e = L.u() - bnd_g_[p];
      loss += beta_ * bnd_weights_[p] * e * e;
      if (!grad.empty()) {
        const std::vector<double> zero(d_, 0.0);
        net.backward(L, 2 * beta_ * bnd_weights_[p] * e * L.bf, zero, 0.0, grad);
      }
    }
    if (!std::isfinite(loss)) throw NumericalFailure("PINN: loss is not finite");
    return loss;
  }

 private:
  // Sum of squared residuals; accumulates scale * d/dtheta of it into grad when non-empty.
  double interior(const MCNet& net, std::span<double> grad, double scale = 1.0) const {
    const std::size_t n = samples();
    const std::size_t chunks = chunk_count(n, detail::kMcChunk);
    std::vector<double> sums(chunks, 0.0);
    std::vector<std::vector<double>> grads(grad.empty() ? 0 : chunks);
    for_chunks(n, detail::kMcChunk, [&](std::size_t c, std::size_t lo, std::size_t hi) {
      std::vector<double> a(d_);
      if (!grad.empty()) grads[c].assign(grad.size(), 0.0);
      for (std::size_t p = lo; p < hi; ++p) {
        const auto L = net.local(point(p));
        const double r = -c1_ * L.lap_u() + b_[p] * L.u() - f_[p];
        sums[c] += r * r;
        if (grad.empty()) continue;
        // r = alpha0 N + sum_k alpha_k dN/dx_k + gamma Lap N - f
        const double w = 2 * scale * r;
        for (int k = 0; k < d_; ++k) a[k] = w * (-2 * c1_ * L.grad_b[k]);
        net.backward(L, w * (-c1_ * L.lap_b + b_[p] * L.bf), a, w * (-c1_ * L.bf), grads[c]);
      }
    });
    double total = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      total += sums[c];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += grads[c][i];
    }
    return total;
  }

  int d_;
  double c1_, volume_, beta_ = 0.0;
  std::vector<double> points_, f_, b_;
  std::vector<double> bnd_points_, bnd_weights_, bnd_g_;
};

/// Sample mean of (-c1 Lap u + b u - f)^2 over n uniform points drawn from seed.
inline double mc_residual_loss(const MCNet& net, const ProblemSpec& s, std::size_t n_samples, std::uint64_t seed) {
  return McResidualObjective(s, n_samples, seed).residual_mean(net);
}

/// DRM Rayleigh quotient: mean(|grad u|^2 + V u^2) / mean(u^2) on one shared sample set.
class McRayleighObjective {
 public:
  McRayleighObjective(const ProblemSpec& s, std::size_t n_samples, std::uint64_t seed)
      : d_(s.dim()), points_(sample_domain(s.domain, n_samples, seed)) {
    if (s.kind != ProblemKind::eigenvalue) throw InvalidArgument(s.name + ": DRM needs an eigenvalue problem");
    v_.assign(n_samples, 0.0);
    if (!s.V.empty())
      for (std::size_t p = 0; p < n_samples; ++p) v_[p] = s.V(std::span<const double>(points_).subspan(p * d_, d_));
  }

  std::size_t samples() const { return v_.size(); }

  double evaluate(const MCNet& net, std::span<double> grad) const {
    if (net.dim() != d_) throw InvalidArgument("DRM: network dimension mismatch");
    const std::size_t n = samples(), np = net.param_count();
    const std::size_t chunks = chunk_count(n, detail::kMcChunk);
    std::vector<double> num(chunks, 0.0), den(chunks, 0.0);
    std::vector<std::vector<double>> gn(grad.empty() ? 0 : chunks), gm(grad.empty() ? 0 : chunks);
    for_chunks(n, detail::kMcChunk, [&](std::size_t c, std::size_t lo, std::size_t hi) {
      std::vector<double> a(d_), zero(d_, 0.0);
      if (!grad.empty()) {
        gn[c].assign(np, 0.0);
        gm[c].assign(np, 0.0);
      }
      for (std::size_t p = lo; p < hi; ++p) {
        const auto L = net.local(std::span<const double>(points_).subspan(p * d_, d_));
        const double u = L.u();
        double a0 = v_[p] * u * L.bf, g2 = 0.0;
        for (int k = 0; k < d_; ++k) {
          const double gk = L.grad_u(k);
          g2 += gk * gk;
          a[k] = 2 * gk * L.bf;
          a0 += gk * L.grad_b[k];
        }
        num[c] += g2 + v_[p] * u * u;
        den[c] += u * u;
        if (grad.empty()) continue;
        net.backward(L, 2 * a0, a, 0.0, gn[c]);
        net.backward(L, 2 * u * L.bf, zero, 0.0, gm[c]);
      }
    });
    double tn = 0.0, tm = 0.0;
    std::vector<double> sn(grad.size(), 0.0), sm(grad.size(), 0.0);
    for (std::size_t c = 0; c < chunks; ++c) {
      tn += num[c];
      tm += den[c];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        sn[i] += gn[c][i];
        sm[i] += gm[c][i];
      }
    }
    const double mass = tm / static_cast<double>(n);
    if (!(mass > 1e-12)) throw DegenerateModel("DRM: mean of u^2 " + std::to_string(mass) + " is below 1e-12");
    const double q = tn / tm;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = (sn[i] - q * sm[i]) / tm;
    if (!std::isfinite(q)) throw NumericalFailure("DRM: Rayleigh quotient is not finite");
    return q;
  }

 private:
  int d_;
  std::vector<double> points_, v_;
};

inline double drm_rayleigh(const MCNet& net, const ProblemSpec& s, std::size_t n_samples, std::uint64_t seed) {
  return McRayleighObjective(s, n_samples, seed).evaluate(net, {});
}

}  // namespace fttnn
