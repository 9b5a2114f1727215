#pragma once

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "fttnn/errors.hpp"

namespace fttnn {

struct Interval {
  double a = 0.0;
  double b = 1.0;

  double length() const { return b - a; }
  bool contains(double x) const { return a <= x && x <= b; }
  bool operator==(const Interval&) const = default;
};

inline void check_interval(const Interval& iv) {
  if (!(iv.a < iv.b) || !std::isfinite(iv.a) || !std::isfinite(iv.b)) {
    throw InvalidArgument("degenerate interval [" + std::to_string(iv.a) + ", " +
                          std::to_string(iv.b) + "]");
  }
}

/// One-dimensional quadrature rule: ascending nodes with matching weights.
struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
  double weight_sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
};

/// Subinterval count and Gauss points per subinterval for one dimension.
struct QuadratureSpec {
  int n_sub = 1;
  int n_pts = 1;

  bool operator==(const QuadratureSpec&) const = default;
};

/// n-point Gauss-Legendre rule on [-1, 1].
///
/// Nodes are the roots of P_n, found by Newton iteration from Chebyshev-type
/// initial guesses; the rule is symmetrized so that x_{n-1-i} = -x_i exactly.
inline Rule1D gauss_legendre(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre: n must be >= 1");
  Rule1D rule;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    // Root i counted from the right end (descending), guess from Tricomi.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      // p1 = P_n(x), p0 = P_{n-1}(x)
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) <= 1e-15) break;
    }
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const int hi = n - 1 - i;
    if (hi == i) {
      rule.nodes[i] = 0.0;
      rule.weights[i] = w;
    } else {
      rule.nodes[hi] = x;
      rule.nodes[i] = -x;
      rule.weights[hi] = w;
      rule.weights[i] = w;
    }
  }
  return rule;
}

/// Composite Gauss-Legendre rule: `n_sub` equal subintervals, `n_pts` points each.
inline Rule1D composite_grid(const Interval& iv, int n_sub, int n_pts) {
  check_interval(iv);
  if (n_sub < 1 || n_pts < 1) throw InvalidArgument("composite_grid: n_sub and n_pts must be >= 1");
  const Rule1D ref = gauss_legendre(n_pts);
  Rule1D rule;
  rule.nodes.reserve(static_cast<std::size_t>(n_sub) * n_pts);
  rule.weights.reserve(static_cast<std::size_t>(n_sub) * n_pts);
  const double len = iv.length();
  for (int s = 0; s < n_sub; ++s) {
    const double lo = iv.a + len * s / n_sub;
    const double hi = (s + 1 == n_sub) ? iv.b : iv.a + len * (s + 1) / n_sub;
    const double mid = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    for (int k = 0; k < n_pts; ++k) {
      rule.nodes.push_back(mid + half * ref.nodes[k]);
      rule.weights.push_back(half * ref.weights[k]);
    }
  }
  return rule;
}

inline Rule1D composite_grid(const Interval& iv, const QuadratureSpec& spec) {
  return composite_grid(iv, spec.n_sub, spec.n_pts);
}

/// Midpoint rectangle rule with `cells` equal cells.
inline Rule1D midpoint_rule(const Interval& iv, int cells) {
  check_interval(iv);
  if (cells < 1) throw InvalidArgument("midpoint_rule: cells must be >= 1");
  Rule1D rule;
  const double h = iv.length() / cells;
  for (int c = 0; c < cells; ++c) {
    rule.nodes.push_back(iv.a + (c + 0.5) * h);
    rule.weights.push_back(h);
  }
  return rule;
}

/// Single node with unit weight: pins a coordinate (used for boundary faces).
inline Rule1D point_rule(double x) { return Rule1D{{x}, {1.0}}; }

/// Per-dimension composite Gauss rules over a box; immutable once built.
class QuadratureGrid {
 public:
  QuadratureGrid(const std::vector<Interval>& box, const std::vector<QuadratureSpec>& specs) : specs_(specs) {
    if (box.size() != specs.size()) throw InvalidArgument("QuadratureGrid: box/spec dimension mismatch");
    rules_.reserve(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) rules_.push_back(composite_grid(box[i], specs[i]));
  }

  std::size_t dim() const { return rules_.size(); }
  const Rule1D& rule(std::size_t i) const { return rules_.at(i); }
  const std::vector<Rule1D>& rules() const { return rules_; }
  const QuadratureSpec& spec(std::size_t i) const { return specs_.at(i); }

 private:
  std::vector<Rule1D> rules_;
  std::vector<QuadratureSpec> specs_;
};

}  // namespace fttnn
