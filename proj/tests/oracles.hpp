#pragma once

// Test-only reference computations, deliberately independent of the library's
// contraction and assembly paths: explicit index sums, dense tensor-product
// quadrature, and finite differences.

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fttnn/core_network.hpp"
#include "fttnn/ftt_model.hpp"
#include "fttnn/quadrature.hpp"

namespace oracle {

/// u(x) via the explicit multi-index sum over alpha_1..alpha_{d-1}; `orders[i]`
/// selects the derivative of core i.
inline double brute_force_chain(const fttnn::FTTModel& m, std::span<const double> x, std::span<const int> orders) {
  const int d = m.dim();
  std::vector<Eigen::MatrixXd> cores(d);
  for (int i = 0; i < d; ++i) cores[i] = m.core(i).eval(x[i], orders[i]);
  const auto& r = m.ranks();
  std::vector<int> alpha(d + 1, 0);
  double sum = 0.0;
  while (true) {
    double p = 1.0;
    for (int i = 0; i < d; ++i) p *= cores[i](alpha[i], alpha[i + 1]);
    sum += p;
    int k = d - 1;
    for (; k >= 1; --k) {
      if (++alpha[k] < r[k]) break;
      alpha[k] = 0;
    }
    if (k < 1) break;
  }
  return sum;
}

inline double brute_force_value(const fttnn::FTTModel& m, std::span<const double> x) {
  std::vector<int> o(m.dim(), 0);
  return brute_force_chain(m, x, o);
}

/// Full tensor-product quadrature of integrand(x) over rules[0] x ... x rules[d-1].
inline double dense_quadrature(const std::vector<fttnn::Rule1D>& rules,
                               const std::function<double(std::span<const double>)>& integrand) {
  const std::size_t d = rules.size();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  double sum = 0.0;
  while (true) {
    double w = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = rules[i].nodes[idx[i]];
      w *= rules[i].weights[idx[i]];
    }
    sum += w * integrand(x);
    std::size_t k = d;
    while (k-- > 0) {
      if (++idx[k] < rules[k].size()) break;
      idx[k] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }
  return sum;
}

/// Central difference of f along coordinate i of params.
inline double central_difference(const std::function<double(std::span<const double>)>& f, std::vector<double> params,
                                 std::size_t i, double h) {
  const double x0 = params[i];
  params[i] = x0 + h;
  const double fp = f(params);
  params[i] = x0 - h;
  const double fm = f(params);
  return (fp - fm) / (2.0 * h);
}

/// Trapezoid rule on n equal cells.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int k = 1; k < n; ++k) s += f(a + k * h);
  return s * h;
}

// Lowest eigenvalue of -u'' + (1/d) cos(pi x + pi) u on (-1, 1) with Dirichlet ends,
// by Galerkin projection onto sin(n pi (x + 1) / 2), n = 1..n_basis.
inline double galerkin_1d(int d, int n_basis) {
  constexpr double pi = std::numbers::pi;
  const auto rule = fttnn::composite_grid({-1.0, 1.0}, 20, 20);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_basis, n_basis);
  for (int m = 1; m <= n_basis; ++m) {
    a(m - 1, m - 1) += std::pow(m * pi / 2, 2);
    for (int n = 1; n <= n_basis; ++n) {
      double s = 0.0;
      for (std::size_t k = 0; k < rule.size(); ++k) {
        const double x = rule.nodes[k];
        s += rule.weights[k] * std::cos(pi * x + pi) / d * std::sin(m * pi * (x + 1) / 2) *
             std::sin(n * pi * (x + 1) / 2);
      }
      a(m - 1, n - 1) += s;
    }
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues()[0];
}

/// lambda_1 of the d-dimensional problem: the potential separates, so it is d times the 1-D value.
inline double schrodinger_lambda1(int d) { return d * galerkin_1d(d, 60); }

}  // namespace oracle
