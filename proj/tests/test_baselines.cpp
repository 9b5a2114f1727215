#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fttnn/baselines.hpp"

namespace fttnn {
namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// TT tensors

TEST(TtEntry, Trivial) {
  TTTensor ones{{3, 4}, {1, 1, 1}, {std::vector<double>(3, 1.0), std::vector<double>(4, 1.0)}};
  const std::vector<int> idx{2, 3};
  EXPECT_EQ(tt_entry(ones, idx), 1.0);
  TTTensor gh{{3, 2}, {1, 1, 1}, {{1.0, 2.0, 3.0}, {5.0, 7.0}}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_EQ(tt_entry(gh, std::vector<int>{i, j}), gh.cores[0][i] * gh.cores[1][j]);
  EXPECT_THROW(tt_entry(gh, std::vector<int>{3, 0}), InvalidArgument);
  EXPECT_THROW(tt_entry(gh, std::vector<int>{0}), InvalidArgument);
}

TEST(TtEntry, MatchesExplicitSum) {
  const auto t = TTTensor::random({4, 3, 5}, {1, 3, 2, 1}, 11);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 5; ++k) {
        double want = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 2; ++b) want += t.at(0, 0, i, a) * t.at(1, a, j, b) * t.at(2, b, k, 0);
        EXPECT_NEAR(tt_entry(t, std::vector<int>{i, j, k}), want, 1e-12);
      }
}

struct Observed {
  std::vector<int> indices;
  std::vector<double> values;
};

Observed observe(const TTTensor& truth, double fraction, std::uint64_t seed) {
  Observed o;
  Rng rng(seed);
  std::bernoulli_distribution keep(fraction);
  const int d = truth.dim();
  std::vector<int> idx(d, 0);
  while (true) {
    if (keep(rng)) {
      o.indices.insert(o.indices.end(), idx.begin(), idx.end());
      o.values.push_back(tt_entry(truth, idx));
    }
    int i = d - 1;
    for (; i >= 0; --i) {
      if (++idx[i] < truth.shape[i]) break;
      idx[i] = 0;
    }
    if (i < 0) break;
  }
  return o;
}

double full_rel_error(const TTTensor& a, const TTTensor& b) {
  const int d = a.dim();
  std::vector<int> idx(d, 0);
  double num = 0.0, den = 0.0;
  while (true) {
    const double x = tt_entry(a, idx), y = tt_entry(b, idx);
    num += (x - y) * (x - y);
    den += y * y;
    int i = d - 1;
    for (; i >= 0; --i) {
      if (++idx[i] < a.shape[i]) break;
      idx[i] = 0;
    }
    if (i < 0) break;
  }
  return std::sqrt(num / den);
}

void expect_monotone(const std::vector<double>& rmse) {
  for (std::size_t k = 1; k < rmse.size(); ++k) EXPECT_LE(rmse[k], rmse[k - 1] + 1e-12) << "half-sweep " << k;
}

TEST(TtAls, SparseMatrixSampleIsBelowDegreesOfFreedom) {
  // A rank-2 20 x 20 matrix has 2 (20 + 20) - 4 = 76 degrees of freedom; 15% of
  // the entries cannot determine it, so recovery is checked at a denser sample.
  const auto truth = TTTensor::random({20, 20}, {1, 2, 1}, 3);
  EXPECT_LT(observe(truth, 0.15, 4).values.size(), 76u);
}

TEST(TtAls, RecoversRankTwoMatrix) {
  const auto truth = TTTensor::random({20, 20}, {1, 2, 1}, 3);
  const auto obs = observe(truth, 0.4, 4);
  const auto res = tt_als_complete(obs.indices, obs.values, {20, 20}, {1, 2, 1}, {.sweeps = 50});
  EXPECT_LE(full_rel_error(res.tensor, truth), 1e-6);
  expect_monotone(res.rmse);
  EXPECT_TRUE(res.warnings.empty());
}

TEST(TtAls, RecoversRankTwoThreeWayTensor) {
  const auto truth = TTTensor::random({20, 20, 20}, {1, 2, 2, 1}, 5);
  const auto obs = observe(truth, 0.15, 6);
  const auto res = tt_als_complete(obs.indices, obs.values, {20, 20, 20}, {1, 2, 2, 1}, {.sweeps = 30});
  EXPECT_LE(full_rel_error(res.tensor, truth), 1e-6);
  expect_monotone(res.rmse);
  EXPECT_TRUE(res.warnings.empty());
}

TEST(TtAls, FullyObservedRankOne) {
  const auto truth = TTTensor::random({6, 7, 5}, {1, 1, 1, 1}, 8);
  const auto obs = observe(truth, 1.0, 0);
  const auto res =
      tt_als_complete(obs.indices, obs.values, {6, 7, 5}, {1, 1, 1, 1}, {.sweeps = 3, .rmse_tol = 1e-13});
  EXPECT_LE(res.sweeps, 3);
  EXPECT_LE(full_rel_error(res.tensor, truth), 1e-10);
}

TEST(TtAls, UnderdeterminedSliceWarnsAndKeepsValues) {
  const auto truth = TTTensor::random({5, 5}, {1, 2, 1}, 1);
  auto obs = observe(truth, 1.0, 0);
  // drop every observation with first index 4 except one
  Observed thin;
  bool kept = false;
  for (std::size_t p = 0; p < obs.values.size(); ++p) {
    if (obs.indices[2 * p] == 4) {
      if (kept) continue;
      kept = true;
    }
    thin.indices.insert(thin.indices.end(), {obs.indices[2 * p], obs.indices[2 * p + 1]});
    thin.values.push_back(obs.values[p]);
  }
  const auto res = tt_als_complete(thin.indices, thin.values, {5, 5}, {1, 2, 1}, {.sweeps = 2, .seed = 3});
  ASSERT_FALSE(res.warnings.empty());
  EXPECT_NE(res.warnings.front().find("core 0 slice 4"), std::string::npos);
  const auto init = TTTensor::random({5, 5}, {1, 2, 1}, derive_seed(3, "als"));
  EXPECT_EQ(res.tensor.at(0, 0, 4, 0), init.at(0, 0, 4, 0));
  EXPECT_EQ(res.tensor.at(0, 0, 4, 1), init.at(0, 0, 4, 1));
  expect_monotone(res.rmse);
}

TEST(TtAls, RejectsBadInput) {
  const std::vector<int> idx{0, 0};
  const std::vector<double> val{1.0};
  EXPECT_THROW(tt_als_complete(idx, {}, {2, 2}, {1, 1, 1}), InvalidArgument);
  EXPECT_THROW(tt_als_complete(idx, val, {2, 2}, {1, 3, 1}), InvalidArgument);
  EXPECT_THROW(tt_als_complete(idx, val, {2, 2}, {2, 1, 1}), InvalidArgument);
  EXPECT_THROW(tt_als_complete(std::vector<int>{0, 2}, val, {2, 2}, {1, 1, 1}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Monte-Carlo network

MCNet random_net(int d, int h, std::uint64_t seed, bool box) {
  std::optional<Box> b;
  if (box) b = Box(d, Interval{-1.0, 1.0});
  auto net = MCNet::init(d, h, seed, b);
  net.b2() = 0.3;
  return net;
}

TEST(MCNet, SpatialDerivativesMatchFiniteDifferences) {
  for (bool box : {false, true}) {
    const auto net = random_net(3, 7, 2, box);
    const std::vector<double> x{0.2, -0.35, 0.6};
    const auto L = net.local(x);
    const double h = 1e-4;
    double lap = 0.0;
    for (int k = 0; k < 3; ++k) {
      auto xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const double up = net(xp), um = net(xm);
      EXPECT_NEAR(L.grad_u(k), (up - um) / (2 * h), 1e-7);
      lap += (up - 2 * L.u() + um) / (h * h);
    }
    EXPECT_NEAR(L.lap_u(), lap, 1e-5 * std::max(1.0, std::abs(lap)));
  }
}

TEST(MCNet, HardFactorVanishesOnFaces) {
  const auto net = random_net(4, 9, 5, true);
  for (int k = 0; k < 4; ++k)
    for (double side : {-1.0, 1.0}) {
      std::vector<double> x{0.1, -0.2, 0.3, 0.4};
      x[k] = side;
      EXPECT_EQ(net(x), 0.0);
    }
}

template <class Obj>
void check_fd(const Obj& obj, MCNet net) {
  std::vector<double> g(net.param_count());
  obj.evaluate(net, g);
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, net.param_count() - 1);
  std::vector<double> p(net.params().begin(), net.params().end());
  for (int t = 0; t < 20; ++t) {
    const std::size_t i = t == 0 ? net.param_count() - 1 : pick(rng);
    const double h = 1e-5, old = p[i];
    p[i] = old + h;
    net.set_params(p);
    const double fp = obj.evaluate(net, {});
    p[i] = old - h;
    net.set_params(p);
    const double fm = obj.evaluate(net, {});
    p[i] = old;
    net.set_params(p);
    const double fd = (fp - fm) / (2 * h);
    EXPECT_LE(std::abs(g[i] - fd) / (std::abs(g[i]) + 1e-8), 1e-5) << "param " << i;
  }
}

TEST(McGradients, PinnHardBoundary) {
  const auto s = builtin("helmholtz-d3");
  check_fd(McResidualObjective(s, 200, 1), random_net(3, 6, 4, false));
  const McResidualObjective obj(s, 200, 1);
  check_fd(obj, MCNet::init(3, 6, 4, s.domain.boxes()[0]));
}

TEST(McGradients, PinnSoftBoundary) {
  auto s = builtin("poisson-lshape");
  s.boundary.dx = 0.5;
  check_fd(McResidualObjective(s, 200, 2), random_net(3, 5, 6, false));
}

TEST(McGradients, DrmRayleigh) {
  const auto s = builtin("schrodinger-d5");
  check_fd(McRayleighObjective(s, 300, 3), random_net(5, 6, 7, true));
}

TEST(McResidual, ZeroNetGivesMeanSourceSquared) {
  const auto s = builtin("poisson-d3");
  const McResidualObjective obj(s, 500, 9);
  double want = 0.0;
  for (std::size_t p = 0; p < 500; ++p) want += std::pow(s.exact_value(obj.point(p)) * 6 * kPi * kPi, 2);
  MCNet zero(3, 4, s.domain.boxes()[0]);
  EXPECT_NEAR(mc_residual_loss(zero, s, 500, 9), want / 500, 1e-9 * want / 500);
}

TEST(McResidual, ExactNetworkHasZeroResidual) {
  // prod sin(2 pi x_i) as four sine units: sin a sin b sin c =
  // (sin(a+b-c) + sin(a-b+c) + sin(-a+b+c) - sin(a+b+c)) / 4
  const auto s = builtin("helmholtz-d3");
  MCNet net(3, 4);
  const int signs[4][3] = {{1, 1, -1}, {1, -1, 1}, {-1, 1, 1}, {1, 1, 1}};
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 3; ++k) net.w1(j, k) = 2 * kPi * signs[j][k];
    net.w2(j) = j == 3 ? -0.25 : 0.25;
  }
  const std::vector<double> x{0.1, 0.7, 0.33};
  EXPECT_NEAR(net(x), s.exact_value(x), 1e-14);
  EXPECT_LE(mc_residual_loss(net, s, 10000, 0), 1e-8);
}

// u = c * prod (1 - x_i^2) on [-1, 1]^3, as a network and as a rank-1 FTT model.
struct BubblePair {
  MCNet net;
  FTTModel model;
};

BubblePair bubble(double c) {
  MCNet net(3, 1, Box(3, Interval{-1.0, 1.0}));
  net.b2() = c;
  std::vector<CoreNetwork> cores;
  for (int i = 0; i < 3; ++i) {
    CoreNetwork core(1, 1, 1, Interval{-1.0, 1.0});
    core.b2()[0] = i == 0 ? c : 1.0;
    cores.push_back(core);
  }
  return {net, FTTModel(std::move(cores))};
}

// Per-sample squared residuals, computed independently of the objective.
std::vector<double> squared_residuals(const MCNet& net, const ProblemSpec& s, std::size_t n, std::uint64_t seed) {
  const auto pts = sample_domain(s.domain, n, seed);
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::span<const double> x(pts.data() + 3 * p, 3);
    const auto L = net.local(x);
    out[p] = std::pow(-L.lap_u() - s.f(x), 2);
  }
  return out;
}

TEST(McResidual, ConvergesToQuadratureValue) {
  const auto s = builtin("poisson-d3");
  const auto b = bubble(2.5);
  const double quad = residual_loss(b.model, s) / s.domain.volume();
  const std::size_t n = 1000000;
  const auto r = squared_residuals(b.net, s, n, 21);
  double mean = 0.0, sq = 0.0;
  for (double v : r) mean += v / n;
  for (double v : r) sq += (v - mean) * (v - mean);
  const double se = std::sqrt(sq / (n - 1) / n);
  EXPECT_NEAR(mc_residual_loss(b.net, s, n, 21), mean, 1e-9 * mean);
  EXPECT_LE(std::abs(mean - quad), 3 * se) << "mean " << mean << " quad " << quad << " se " << se;
}

TEST(McResidual, UnbiasedOverReseedings) {
  const auto s = builtin("poisson-d3");
  const auto b = bubble(1.5);
  const double quad = residual_loss(b.model, s) / s.domain.volume();
  const std::size_t n = 2000;
  double total = 0.0, var = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = squared_residuals(b.net, s, n, seed);
    double m = 0.0, sq = 0.0;
    for (double v : r) m += v / n;
    for (double v : r) sq += (v - m) * (v - m);
    EXPECT_NEAR(mc_residual_loss(b.net, s, n, seed), m, 1e-9 * m);
    total += m;
    var += sq / (n - 1) / n;
  }
  const double se = std::sqrt(var) / 50;
  EXPECT_LE(std::abs(total / 50 - quad), 3 * se);
}

TEST(Drm, ExactBoxEigenfunction) {
  // prod cos(pi x_i / 2) on [-1, 1]^3 from four units, cos = sin(. + pi/2):
  // cos a cos b cos c = (cos(a+b+c) + cos(a+b-c) + cos(a-b+c) + cos(a-b-c)) / 4
  auto s = builtin("schrodinger-d5");
  s.domain = BoxDomain::cube(3, {-1.0, 1.0});
  s.V = SeparableField(3);
  MCNet net(3, 4);
  const int signs[4][3] = {{1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {1, -1, -1}};
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 3; ++k) net.w1(j, k) = kPi / 2 * signs[j][k];
    net.b1(j) = kPi / 2;
    net.w2(j) = 0.25;
  }
  const std::vector<double> x{0.3, -0.5, 0.8};
  EXPECT_NEAR(net(x), std::cos(kPi * 0.15) * std::cos(kPi * 0.25) * std::cos(kPi * 0.4), 1e-14);
  EXPECT_NEAR(drm_rayleigh(net, s, 200000, 1), 3 * kPi * kPi / 4, 0.02 * 3 * kPi * kPi / 4);
}

TEST(Drm, HardFactorConstantIsFinite) {
  const auto s = builtin("schrodinger-d5");
  MCNet net(5, 3, s.domain.boxes()[0]);
  net.b2() = 1.0;
  const double q = drm_rayleigh(net, s, 5000, 2);
  EXPECT_TRUE(std::isfinite(q));
  EXPECT_GE(q, 0.0);
  MCNet zero(5, 3, s.domain.boxes()[0]);
  EXPECT_THROW(drm_rayleigh(zero, s, 100, 2), DegenerateModel);
}

TEST(Parallel, ThreadCountDoesNotChangeResults) {
  const auto s = builtin("helmholtz-d3");
  const auto net = random_net(3, 8, 1, false);
  const McResidualObjective obj(s, 5000, 0);
  std::vector<double> g1(net.param_count()), g4(net.param_count());
  ::setenv("FTTNN_THREADS", "1", 1);
  const double l1 = obj.evaluate(net, g1);
  ::setenv("FTTNN_THREADS", "4", 1);
  const double l4 = obj.evaluate(net, g4);
  ::setenv("FTTNN_THREADS", "zero", 1);
  EXPECT_THROW(thread_count(), InvalidArgument);
  ::unsetenv("FTTNN_THREADS");
  EXPECT_EQ(l1, l4);
  EXPECT_EQ(g1, g4);
}

}  // namespace
}  // namespace fttnn
