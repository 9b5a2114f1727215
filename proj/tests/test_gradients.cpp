#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fttnn/gradients.hpp"
#include "oracles.hpp"

namespace fttnn {
namespace {

constexpr double kPi = std::numbers::pi;

// Checks `count` random coordinates of the objective's gradient against central differences.
void expect_fd_match(const Objective& obj, const FTTModel& model, int count, std::uint64_t seed, double step = 1e-5) {
  const auto [value, grad] = loss_and_grad(obj, model);
  ASSERT_TRUE(std::isfinite(value));
  FTTModel work = model;
  auto f = [&](std::span<const double> p) {
    work.set_params(p);
    return obj.evaluate(work, {});
  };
  const auto params = model.get_params();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  for (int c = 0; c < count; ++c) {
    const std::size_t i = pick(rng);
    const double fd = oracle::central_difference(f, params, i, step);
    const auto where = param_index(model, i);
    EXPECT_LE(std::abs(grad[i] - fd) / (std::abs(grad[i]) + 1e-8), 1e-5)
        << obj.name() << " param " << i << " (core " << where.core << " " << layer_name(where.layer) << "["
        << where.position << "]) grad " << grad[i] << " fd " << fd;
  }
}

std::vector<Region> cube_regions(int d, Interval iv, QuadratureSpec q = {4, 8}) {
  return interior_regions(BoxDomain::cube(d, iv), q);
}

SeparableField sine_product(int d, double w, double coeff) {
  return SeparableField(d, {{coeff, std::vector<Factor1D>(d, Factor1D::sin(w))}});
}

TEST(ParamIndex, BijectionWithFlatOffsets) {
  const auto m = FTTModel::init({1, 2, 3, 1}, {4, 5, 6}, 0);
  for (std::size_t i = 0; i < m.param_count(); ++i) EXPECT_EQ(flat_index(m, param_index(m, i)), i);
  EXPECT_EQ(param_index(m, 0), (ParamIndex{0, Layer::w1, 0}));
  EXPECT_EQ(param_index(m, 4), (ParamIndex{0, Layer::b1, 0}));
  EXPECT_EQ(param_index(m, 8), (ParamIndex{0, Layer::w2, 0}));
  EXPECT_EQ(param_index(m, 16), (ParamIndex{0, Layer::b2, 0}));
  EXPECT_EQ(param_index(m, m.param_offset(1)), (ParamIndex{1, Layer::w1, 0}));
  EXPECT_THROW(param_index(m, m.param_count()), InvalidArgument);
}

TEST(Gradients, ConstantLossHasZeroGradient) {
  AssembledFunctional fn(3, cube_regions(3, {0.0, 1.0}));
  fn.add_constant(4.5);
  FunctionalObjective obj(fn, "constant");
  const auto m = FTTModel::init(uniform_ranks(3, 2), 6, 1);
  const auto [v, g] = loss_and_grad(obj, m);
  EXPECT_EQ(v, 4.5);
  for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(Gradients, ValueMatchesAssembly) {
  const auto m = FTTModel::init(uniform_ranks(3, 2), 10, 2);
  EllipticOperator op{1.0, {}, sine_product(3, kPi, 3.0 * kPi * kPi)};
  const auto fn = residual_functional(op, cube_regions(3, {-1.0, 1.0}), 3);
  FunctionalObjective obj(fn, "residual");
  EXPECT_NEAR(loss_and_grad(obj, m).first, fn.value(m), 1e-13 * std::abs(fn.value(m)));
}

TEST(Gradients, MassTermAndOutputScaling) {
  const auto m = FTTModel::init(uniform_ranks(2, 2), 8, 3);
  const auto e = energy_functionals(SeparableField(2), cube_regions(2, {-1.0, 1.0}), 2);
  FunctionalObjective mass(e.mass, "mass");
  expect_fd_match(mass, m, 20, 11);
  // scaling core 0's output layer by s scales u by s, so d/ds of integral u^2 at s=1 is 2 * integral u^2
  const auto [v, g] = loss_and_grad(mass, m);
  const auto& c = m.core(0);
  double directional = 0.0;
  const std::size_t w2 = flat_index(m, {0, Layer::w2, 0});
  const std::size_t b2 = flat_index(m, {0, Layer::b2, 0});
  const auto p = m.get_params();
  for (int k = 0; k < c.outputs() * c.hidden(); ++k) directional += g[w2 + k] * p[w2 + k];
  for (int k = 0; k < c.outputs(); ++k) directional += g[b2 + k] * p[b2 + k];
  EXPECT_NEAR(directional, 2.0 * v, 1e-12 * v);
}

TEST(Gradients, PoissonResidualMatchesFiniteDifferences) {
  const auto m = FTTModel::init(uniform_ranks(3, 2), 10, 4, InitScheme::glorot_sine,
                                std::vector<std::optional<Interval>>(3, Interval{-1.0, 1.0}));
  EllipticOperator op{1.0, {}, sine_product(3, kPi, 3.0 * kPi * kPi)};
  FunctionalObjective obj(residual_functional(op, cube_regions(3, {-1.0, 1.0}), 3), "poisson");
  expect_fd_match(obj, m, 20, 12);
}

TEST(Gradients, HelmholtzResidualMatchesFiniteDifferences) {
  const auto m = FTTModel::init(uniform_ranks(3, 2), 10, 5, InitScheme::glorot_sine,
                                std::vector<std::optional<Interval>>(3, Interval{0.0, 1.0}));
  EllipticOperator op{1.0, SeparableField::constant(3, -1.0), sine_product(3, 2 * kPi, 12 * kPi * kPi - 1.0)};
  FunctionalObjective obj(residual_functional(op, cube_regions(3, {0.0, 1.0}), 3), "helmholtz");
  expect_fd_match(obj, m, 20, 13);
}

TEST(Gradients, RayleighMatchesFiniteDifferences) {
  const int d = 3;
  SeparableField v(d);
  for (int k = 0; k < d; ++k) {
    std::vector<Factor1D> fs(d, Factor1D::constant(1.0));
    fs[k] = Factor1D::cos(kPi, kPi);
    v.add({1.0 / d, fs});
  }
  const auto m = FTTModel::init(uniform_ranks(d, 2), 8, 6, InitScheme::glorot_sine,
                                std::vector<std::optional<Interval>>(d, Interval{-1.0, 1.0}));
  RayleighObjective obj(energy_functionals(v, cube_regions(d, {-1.0, 1.0}), d));
  expect_fd_match(obj, m, 20, 14);
}

TEST(Gradients, RayleighDegenerateMass) {
  const auto m = FTTModel::init(uniform_ranks(2, 2), 4, 0, InitScheme::zeros);
  RayleighObjective obj(energy_functionals(SeparableField(2), cube_regions(2, {-1.0, 1.0}), 2));
  EXPECT_THROW(obj.evaluate(m, {}), DegenerateModel);
}

TEST(Gradients, SupervisedMatchesFiniteDifferences) {
  const int d = 4;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> pts(200 * d), labels(200);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      pts[p * d + i] = u(rng);
      s += pts[p * d + i] * pts[p * d + i];
    }
    labels[p] = 1.0 / std::sqrt(s + 1e-12);
  }
  const auto m = FTTModel::init(uniform_ranks(d, 2), 10, 7);
  SupervisedObjective obj(d, pts, labels);
  // value agrees with an independent pointwise computation
  double mse = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const double e = oracle::brute_force_value(m, std::span<const double>(pts).subspan(p * d, d)) - labels[p];
    mse += e * e;
  }
  EXPECT_NEAR(obj.evaluate(m, {}), mse / labels.size(), 1e-12 * mse);
  expect_fd_match(obj, m, 20, 15);
}

TEST(Gradients, SupervisedZeroAtGeneratingFunction) {
  const auto m = FTTModel::init(uniform_ranks(3, 2), 5, 9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> pts(60), labels(20);
  for (auto& p : pts) p = u(rng);
  for (int p = 0; p < 20; ++p) labels[p] = forward(m, std::span<const double>(pts).subspan(3 * p, 3));
  EXPECT_LE(SupervisedObjective(3, pts, labels).evaluate(m, {}), 1e-28);
  EXPECT_THROW(SupervisedObjective(3, {}, {}), InvalidArgument);
}

TEST(Gradients, BoundaryLossMatchesFiniteDifferences) {
  const BoxDomain lshape({{{-1.0, 0.0}, {-1.0, 1.0}, {-1.0, 1.0}}, {{0.0, 1.0}, {0.0, 1.0}, {-1.0, 1.0}}});
  const auto m = FTTModel::init(uniform_ranks(3, 2), 8, 10);
  const SeparableField g(3, {{0.5, {Factor1D::sin(1.0), Factor1D::poly({1.0, 0.5}), Factor1D::exp(0.3)}}});
  FunctionalObjective obj(boundary_functional(g, boundary_regions(lshape, 0.1), 3), "boundary", 100.0);
  expect_fd_match(obj, m, 20, 16);
}

TEST(Gradients, Linearity) {
  const auto m = FTTModel::init(uniform_ranks(3, 2), 6, 11);
  const auto regions = cube_regions(3, {-1.0, 1.0});
  EllipticOperator op{1.0, {}, sine_product(3, kPi, 2.0)};
  auto l1 = std::make_shared<FunctionalObjective>(residual_functional(op, regions, 3), "l1");
  auto l2 = std::make_shared<FunctionalObjective>(energy_functionals(SeparableField(3), regions, 3).mass, "l2");
  WeightedSum sum;
  sum.add(0.3, l1);
  sum.add(-2.5, l2);
  const auto [v, g] = loss_and_grad(sum, m);
  const auto [v1, g1] = loss_and_grad(*l1, m);
  const auto [v2, g2] = loss_and_grad(*l2, m);
  EXPECT_NEAR(v, 0.3 * v1 - 2.5 * v2, 1e-12 * (std::abs(v1) + std::abs(v2)));
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(g[i], 0.3 * g1[i] - 2.5 * g2[i], 1e-12 * std::max(1.0, std::abs(g1[i]) + std::abs(g2[i])));
}

TEST(Gradients, Deterministic) {
  const auto m = FTTModel::init(uniform_ranks(3, 3), 12, 12);
  EllipticOperator op{1.0, SeparableField::constant(3, 2.0), sine_product(3, kPi, 1.0)};
  FunctionalObjective obj(residual_functional(op, cube_regions(3, {-1.0, 1.0}), 3), "r");
  const auto a = loss_and_grad(obj, m);
  const auto b = loss_and_grad(obj, m);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Gradients, NonFiniteNamesTerm) {
  auto m = FTTModel::init(uniform_ranks(2, 1), 3, 0);
  auto p = m.get_params();
  p[flat_index(m, {0, Layer::b2, 0})] = std::numeric_limits<double>::infinity();
  m.set_params(p);
  EllipticOperator op{1.0, {}, sine_product(2, kPi, 1.0)};
  FunctionalObjective obj(residual_functional(op, cube_regions(2, {-1.0, 1.0}), 2), "poisson");
  try {
    loss_and_grad(obj, m);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("term '"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace fttnn
