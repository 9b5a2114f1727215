#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fttnn/errors.hpp"
#include "fttnn/quadrature.hpp"
#include "fttnn/rng.hpp"

namespace fttnn {

enum class InitScheme { glorot_sine, zeros };

/// Forward quantities of one core network at a batch of scalar inputs.
///
/// `values[k]` is N x (rows*cols), row n holding the row-major k-th derivative
/// matrix at `x[n]`, boundary factor included. Only orders <= max_order are filled.
struct CoreBatch {
  Eigen::VectorXd x;
  Eigen::ArrayXXd s;  // sin(W1 x + b1), N x h
  Eigen::ArrayXXd c;  // cos(W1 x + b1), N x h
  std::array<Eigen::MatrixXd, 3> values;
  Eigen::VectorXd q;   // boundary factor (x - a)(b - x); empty without boundary
  Eigen::VectorXd dq;  // its derivative a + b - 2x
  int max_order = 0;

  Eigen::Index size() const { return x.size(); }
};

/// Adjoints of a CoreBatch's values, same shapes; an empty matrix means zero.
using CoreAdjoint = std::array<Eigen::MatrixXd, 3>;

/// Scalar-input, matrix-output one-hidden-layer sine network u_i(x) of shape rows x cols.
///
/// phi(x) = W2 sin(W1 x + b1) + b2, reshaped row-major to rows x cols. With a
/// boundary interval (a, b) the output is (x - a)(b - x) phi(x), which vanishes
/// exactly at both endpoints.
///
/// Flat parameter order: W1 (h), b1 (h), W2 (rows*cols x h, row-major), b2 (rows*cols).
class CoreNetwork {
 public:
  CoreNetwork(int rows, int cols, int hidden, std::optional<Interval> boundary = std::nullopt)
      : rows_(rows), cols_(cols), hidden_(hidden), boundary_(boundary) {
    if (rows < 1 || cols < 1 || hidden < 1) throw InvalidArgument("CoreNetwork: rows, cols and hidden must be >= 1");
    if (boundary_) check_interval(*boundary_);
    w1_ = Eigen::VectorXd::Zero(hidden);
    b1_ = Eigen::VectorXd::Zero(hidden);
    w2_ = Eigen::MatrixXd::Zero(outputs(), hidden);
    b2_ = Eigen::VectorXd::Zero(outputs());
  }

  /// Deterministic initialization. glorot_sine: Glorot-uniform per layer with the
  /// input weights scaled by pi, hidden biases U(-1, 1), output bias zero.
  static CoreNetwork init(int rows, int cols, int hidden, std::uint64_t seed,
                          InitScheme scheme = InitScheme::glorot_sine,
                          std::optional<Interval> boundary = std::nullopt) {
    CoreNetwork net(rows, cols, hidden, boundary);
    if (scheme == InitScheme::zeros) return net;
    Rng rng(seed);
    const double lim1 = std::numbers::pi * std::sqrt(6.0 / (1.0 + hidden));
    const double lim2 = std::sqrt(6.0 / (hidden + net.outputs()));
    std::uniform_real_distribution<double> u1(-lim1, lim1), ub(-1.0, 1.0), u2(-lim2, lim2);
    for (int j = 0; j < hidden; ++j) net.w1_[j] = u1(rng);
    for (int j = 0; j < hidden; ++j) net.b1_[j] = ub(rng);
    for (int o = 0; o < net.outputs(); ++o)
      for (int j = 0; j < hidden; ++j) net.w2_(o, j) = u2(rng);
    return net;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int hidden() const { return hidden_; }
  int outputs() const { return rows_ * cols_; }
  const std::optional<Interval>& boundary() const { return boundary_; }

  std::size_t param_count() const {
    return static_cast<std::size_t>(2 * hidden_ + outputs() * hidden_ + outputs());
  }

  Eigen::VectorXd& w1() { return w1_; }
  Eigen::VectorXd& b1() { return b1_; }
  Eigen::MatrixXd& w2() { return w2_; }
  Eigen::VectorXd& b2() { return b2_; }
  const Eigen::VectorXd& w1() const { return w1_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::MatrixXd& w2() const { return w2_; }
  const Eigen::VectorXd& b2() const { return b2_; }

  void get_params(std::span<double> out) const {
    check_span(out.size());
    std::size_t p = 0;
    for (int j = 0; j < hidden_; ++j) out[p++] = w1_[j];
    for (int j = 0; j < hidden_; ++j) out[p++] = b1_[j];
    for (int o = 0; o < outputs(); ++o)
      for (int j = 0; j < hidden_; ++j) out[p++] = w2_(o, j);
    for (int o = 0; o < outputs(); ++o) out[p++] = b2_[o];
  }

  void set_params(std::span<const double> in) {
    check_span(in.size());
    std::size_t p = 0;
    for (int j = 0; j < hidden_; ++j) w1_[j] = in[p++];
    for (int j = 0; j < hidden_; ++j) b1_[j] = in[p++];
    for (int o = 0; o < outputs(); ++o)
      for (int j = 0; j < hidden_; ++j) w2_(o, j) = in[p++];
    for (int o = 0; o < outputs(); ++o) b2_[o] = in[p++];
  }

  /// Value (order 0) or exact first/second input-derivative at x, as rows x cols.
  Eigen::MatrixXd eval(double x, int order = 0) const {
    if (order < 0 || order > 2) throw InvalidArgument("CoreNetwork::eval: order must be 0, 1 or 2");
    const double xs[1] = {x};
    const CoreBatch batch = evaluate(xs, order);
    Eigen::MatrixXd out(rows_, cols_);
    for (int a = 0; a < rows_; ++a)
      for (int b = 0; b < cols_; ++b) out(a, b) = batch.values[order](0, a * cols_ + b);
    return out;
  }

  CoreBatch evaluate(std::span<const double> xs, int max_order) const {
    if (max_order < 0 || max_order > 2) throw InvalidArgument("CoreNetwork::evaluate: order must be 0, 1 or 2");
    CoreBatch batch;
    const auto n = static_cast<Eigen::Index>(xs.size());
    batch.max_order = max_order;
    batch.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), n);
    const Eigen::ArrayXXd z = ((batch.x * w1_.transpose()).rowwise() + b1_.transpose()).array();
    batch.s = z.sin();
    batch.c = z.cos();

    std::array<Eigen::MatrixXd, 3> phi;
    phi[0] = (batch.s.matrix() * w2_.transpose()).rowwise() + b2_.transpose();
    if (max_order >= 1) {
      phi[1] = (batch.c.rowwise() * w1_.transpose().array()).matrix() * w2_.transpose();
    }
    if (max_order >= 2) {
      phi[2] = -(batch.s.rowwise() * w1_.transpose().array().square()).matrix() * w2_.transpose();
    }

    if (!boundary_) {
      for (int k = 0; k <= max_order; ++k) batch.values[k] = std::move(phi[k]);
      return batch;
    }
    const double a = boundary_->a;
    const double b = boundary_->b;
    batch.q.resize(n);
    batch.dq.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      batch.q[i] = (batch.x[i] - a) * (b - batch.x[i]);
      batch.dq[i] = a + b - 2.0 * batch.x[i];
    }
    batch.values[0] = batch.q.asDiagonal() * phi[0];
    if (max_order >= 1) batch.values[1] = batch.dq.asDiagonal() * phi[0] + batch.q.asDiagonal() * phi[1];
    if (max_order >= 2)
      batch.values[2] = -2.0 * phi[0] + 2.0 * (batch.dq.asDiagonal() * phi[1]) + batch.q.asDiagonal() * phi[2];
    return batch;
  }

  /// Accumulates d(loss)/d(params) into `grad` given adjoints of `batch.values`.
  void backward(const CoreBatch& batch, const CoreAdjoint& adj, std::span<double> grad) const {
    check_span(grad.size());
    const Eigen::Index n = batch.size();
    const int h = hidden_;
    const int r = outputs();
    auto present = [&](int k) { return adj[k].size() > 0; };
    for (int k = 0; k < 3; ++k) {
      if (present(k) && (k > batch.max_order || adj[k].rows() != n || adj[k].cols() != r))
        throw InvalidArgument("CoreNetwork::backward: adjoint shape mismatch");
    }

    // Adjoints of the raw network derivatives phi, phi', phi''.
    std::array<Eigen::MatrixXd, 3> pbar;
    if (!boundary_) {
      for (int k = 0; k < 3; ++k)
        if (present(k)) pbar[k] = adj[k];
    } else {
      const auto& q = batch.q;
      const auto& dq = batch.dq;
      Eigen::MatrixXd p0 = Eigen::MatrixXd::Zero(n, r);
      if (present(0)) p0 += q.asDiagonal() * adj[0];
      if (present(1)) p0 += dq.asDiagonal() * adj[1];
      if (present(2)) p0 += -2.0 * adj[2];
      pbar[0] = std::move(p0);
      if (present(1) || present(2)) {
        Eigen::MatrixXd p1 = Eigen::MatrixXd::Zero(n, r);
        if (present(1)) p1 += q.asDiagonal() * adj[1];
        if (present(2)) p1 += 2.0 * (dq.asDiagonal() * adj[2]);
        pbar[1] = std::move(p1);
      }
      if (present(2)) pbar[2] = q.asDiagonal() * adj[2];
    }

    Eigen::Map<Eigen::VectorXd> gw1(grad.data(), h);
    Eigen::Map<Eigen::VectorXd> gb1(grad.data() + h, h);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw2(grad.data() + 2 * h, r, h);
    Eigen::Map<Eigen::VectorXd> gb2(grad.data() + 2 * h + static_cast<std::ptrdiff_t>(r) * h, r);

    const Eigen::ArrayXd w1 = w1_.array();
    const Eigen::ArrayXXd xcol = batch.x.array().replicate(1, h);
    Eigen::ArrayXXd dz = Eigen::ArrayXXd::Zero(n, h);  // d(loss)/d(z) per node and neuron
    Eigen::ArrayXXd dw1_extra = Eigen::ArrayXXd::Zero(n, h);  // explicit W1 dependence (not through z)

    if (pbar[0].size() > 0) {
      gw2 += pbar[0].transpose() * batch.s.matrix();
      gb2 += pbar[0].colwise().sum().transpose();
      const Eigen::ArrayXXd a = (pbar[0] * w2_).array();
      dz += a * batch.c;
    }
    if (pbar[1].size() > 0) {
      const Eigen::ArrayXXd cw = batch.c.rowwise() * w1.transpose();
      gw2 += pbar[1].transpose() * cw.matrix();
      const Eigen::ArrayXXd bb = (pbar[1] * w2_).array();
      // term B_j * w1_j * cos(z_j)
      dz -= (bb * batch.s).rowwise() * w1.transpose();
      dw1_extra += bb * batch.c;
    }
    if (pbar[2].size() > 0) {
      const Eigen::ArrayXXd sw2 = batch.s.rowwise() * w1.square().transpose();
      gw2 -= pbar[2].transpose() * sw2.matrix();
      const Eigen::ArrayXXd cc = (pbar[2] * w2_).array();
      // term -C_j * w1_j^2 * sin(z_j)
      dz -= (cc * batch.c).rowwise() * w1.square().transpose();
      dw1_extra -= 2.0 * ((cc * batch.s).rowwise() * w1.transpose());
    }
    gb1 += dz.colwise().sum().matrix().transpose();
    gw1 += ((dz * xcol).colwise().sum() + dw1_extra.colwise().sum()).matrix().transpose();
  }

 private:
  void check_span(std::size_t n) const {
    if (n != param_count())
      throw InvalidArgument("CoreNetwork: parameter span has length " + std::to_string(n) + ", expected " +
                            std::to_string(param_count()));
  }

  int rows_;
  int cols_;
  int hidden_;
  std::optional<Interval> boundary_;
  Eigen::VectorXd w1_;
  Eigen::VectorXd b1_;
  Eigen::MatrixXd w2_;
  Eigen::VectorXd b2_;
};

}  // namespace fttnn
