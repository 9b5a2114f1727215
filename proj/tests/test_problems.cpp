#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "fttnn/checkpoint.hpp"
#include "fttnn/problems.hpp"
#include "oracles.hpp"

namespace fttnn {
namespace {

constexpr double kPi = std::numbers::pi;

CoreNetwork sine_core(double w, double phase = 0.0, double amp = 1.0) {
  CoreNetwork c(1, 1, 1);
  c.w1()[0] = w;
  c.b1()[0] = phase;
  c.w2()(0, 0) = amp;
  return c;
}

FTTModel helmholtz_exact_model(int d, double amp = 1.0) {
  std::vector<CoreNetwork> cores;
  for (int i = 0; i < d; ++i) cores.push_back(sine_core(2 * kPi, 0.0, i == 0 ? amp : 1.0));
  return FTTModel(std::move(cores));
}

TEST(Builtins, TableSettings) {
  const auto p3 = builtin("poisson-d3");
  EXPECT_EQ(p3.rank, 2);
  EXPECT_EQ(p3.hidden, 50);
  EXPECT_EQ(p3.quadrature[0][0].n_sub, 30);
  EXPECT_EQ(p3.quadrature[0][0].n_pts, 30);
  EXPECT_EQ(builtin("poisson-d5").rank, 3);
  EXPECT_EQ(builtin("poisson-d7").hidden, 35);
  EXPECT_EQ(builtin("helmholtz-d5").hidden, 50);
  const auto s5 = builtin("schrodinger-d5");
  ASSERT_TRUE(s5.exact_lambda.has_value());
  EXPECT_EQ(*s5.exact_lambda, 11.8345);
  EXPECT_EQ(s5.quadrature[0][0].n_sub, 20);
  EXPECT_EQ(*builtin("schrodinger-d10").exact_lambda, 24.1728);
  EXPECT_EQ(builtin("schrodinger-d10").rank, 5);
  const auto h3 = builtin("helmholtz-d3");
  EXPECT_NEAR(h3.f.terms()[0].coeff, 4 * kPi * kPi * 3 - 1, 1e-12);
  EXPECT_EQ(h3.quadrature[0][0].n_sub, 40);
  EXPECT_EQ(builtin("helmholtz-k25pi").continuation_parent, "helmholtz-k15pi");
  EXPECT_EQ(builtin("helmholtz-k5pi").continuation_parent, "helmholtz-k3pi");
  EXPECT_EQ(builtin("helmholtz-k5pi").schedule.lbfgs_epochs, 2000);
  const auto l = builtin("poisson-lshape");
  EXPECT_FALSE(l.boundary.hard);
  EXPECT_EQ(l.boundary.beta, 100.0);
  EXPECT_EQ(l.boundary.dx, 0.1);
  EXPECT_EQ(l.quadrature[0][0].n_sub, 20);
  EXPECT_EQ(l.quadrature[0][1].n_sub, 40);
  EXPECT_EQ(builtin("singular-approx-d4").n_samples, 100000u);
  EXPECT_THROW(builtin("poisson-d4"), UnsupportedProblem);
}

TEST(Builtins, ListAndDescribe) {
  const auto lines = list_problems();
  EXPECT_EQ(lines.size(), builtin_names().size());
  bool found = false;
  for (const auto& l : lines) found = found || l.find("schrodinger-d10 (r=5, h=25)") != std::string::npos;
  EXPECT_TRUE(found);
  EXPECT_NE(describe(builtin("poisson-d3")).find("30x30"), std::string::npos);
}

TEST(Builtins, ExactSolutionsSatisfyTheirEquations) {
  for (const auto& name : builtin_names()) {
    const auto s = builtin(name);
    if (s.kind != ProblemKind::elliptic) continue;
    EXPECT_LE(exact_residual_check(s), 1e-8) << name;
  }
}

TEST(Builtins, CorruptedSourceIsDetected) {
  for (const char* name : {"poisson-d3", "helmholtz-k5pi", "poisson-lshape"}) {
    auto s = builtin(name);
    s.f = s.f.scaled(1.01);
    EXPECT_GE(exact_residual_check(s), 1e-4) << name;
  }
}

TEST(Builtins, SchrodingerEigenvaluesMatchGalerkinOracle) {
  // The potential is a sum of 1-D terms, so lambda_1 is d times the 1-D ground state.
  for (auto [d, want] : {std::pair{5, 11.8345}, std::pair{10, 24.1728}}) {
    const double mu = oracle::galerkin_1d(d, 40);
    EXPECT_NEAR(mu, oracle::galerkin_1d(d, 60), 1e-10);
    EXPECT_NEAR(d * mu, want, 1e-4) << "d=" << d;
    EXPECT_LT(d * mu, want) << "published value is rounded up";
  }
}

TEST(RelativeError, ExactModelAndScaling) {
  const auto s = builtin("helmholtz-d3");
  const ErrorEvaluator err(s, default_eval(3));
  EXPECT_EQ(err.size(), 101u * 101u * 101u);
  EXPECT_LE(err(helmholtz_exact_model(3)), 1e-10);
  for (double alpha : {0.0, 0.5, 2.0}) EXPECT_NEAR(err(helmholtz_exact_model(3, alpha)), std::abs(alpha - 1.0), 1e-10);
  EXPECT_EQ(err(FTTModel::init(uniform_ranks(3, 2), 4, 0, InitScheme::zeros)), 1.0);
}

TEST(RelativeError, RandomPointsForHigherDimensions) {
  const auto s = builtin("helmholtz-d5");
  const auto e = default_eval(5);
  EXPECT_EQ(e.method, EvalSpec::Method::random_uniform);
  EXPECT_EQ(e.samples, 100000u);
  const ErrorEvaluator err(s, e);
  EXPECT_LE(err(helmholtz_exact_model(5)), 1e-10);
  EXPECT_NEAR(err(helmholtz_exact_model(5, 2.0)), 1.0, 1e-10);
  // the pointwise path agrees with the grid path
  const auto m = make_model(s, 3);
  EXPECT_NEAR(err([&](std::span<const double> x) { return forward(m, x); }), err(m), 1e-12);
}

TEST(RelativeError, LShapeGridIsFilteredToDomain) {
  const auto s = builtin("poisson-lshape");
  const ErrorEvaluator err(s, default_eval(3));
  // points with x1 > 0 and x2 < 0 are outside; the closure keeps the shared planes
  EXPECT_EQ(err.size(), 101u * (101u * 101u - 50u * 50u));
  err.for_each_point([&](std::span<const double> x) { EXPECT_TRUE(s.domain.contains(x)); });
}

TEST(RelativeError, UndefinedForZeroExact) {
  auto s = builtin("poisson-d3");
  s.exact_value = [](std::span<const double>) { return 0.0; };
  EXPECT_THROW(ErrorEvaluator(s, default_eval(3)), UndefinedMetric);
}

TEST(Rayleigh, BoxEigenfunction) {
  auto s = builtin("schrodinger-d5");
  s.V = SeparableField(5);
  std::vector<CoreNetwork> cores;
  for (int i = 0; i < 5; ++i) cores.push_back(sine_core(kPi / 2, kPi / 2));
  EXPECT_NEAR(rayleigh(FTTModel(std::move(cores)), s), 5 * kPi * kPi / 4, 1e-6);
}

TEST(Rayleigh, VariationalBound) {
  const auto s = builtin("schrodinger-d5");
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    EXPECT_GE(rayleigh(make_model(s, seed), s), *s.exact_lambda - 1e-6);
}

TEST(Boundaries, HardSpecsHaveZeroBoundaryLoss) {
  for (const char* name : {"poisson-d3", "helmholtz-d3", "helmholtz-k3pi"}) {
    const auto s = builtin(name);
    EXPECT_EQ(boundary_loss(make_model(s, 1), s), 0.0) << name;
  }
  const auto l = builtin("poisson-lshape");
  const double b = boundary_loss(make_model(l, 1), l);
  EXPECT_TRUE(std::isfinite(b));
  EXPECT_GT(b, 0.0);
}

TEST(Objectives, MatchProblemKinds) {
  const auto p = builtin("poisson-d3");
  const auto m = make_model(p, 0);
  EXPECT_NEAR(make_objective(p)->evaluate(m, {}), residual_loss(m, p), 1e-9 * residual_loss(m, p));
  const auto l = builtin("poisson-lshape");
  const auto ml = make_model(l, 0);
  EXPECT_NEAR(make_objective(l)->evaluate(ml, {}), residual_loss(ml, l) + 100.0 * boundary_loss(ml, l),
              1e-9 * residual_loss(ml, l));
  const auto e = builtin("schrodinger-d5");
  const auto me = make_model(e, 0);
  EXPECT_NEAR(make_objective(e)->evaluate(me, {}), rayleigh(me, e), 1e-12);
}

TEST(Supervised, LossAndDataset) {
  auto s = builtin("singular-approx-d4");
  const auto [p1, l1] = supervised_dataset(s, 1000, 7);
  const auto [p2, l2] = supervised_dataset(s, 1000, 7);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(l1, l2);
  for (double x : p1) EXPECT_TRUE(x >= -1.0 && x <= 1.0);
  std::vector<CoreNetwork> cores;
  for (int i = 0; i < 4; ++i) {
    CoreNetwork c(1, 1, 2);
    c.b2()[0] = i == 0 ? 3.0 : 1.0;
    cores.push_back(c);
  }
  const FTTModel constant(std::move(cores));
  EXPECT_EQ(supervised_loss(constant, p1, std::vector<double>(1000, 3.0)), 0.0);
  EXPECT_THROW(supervised_dataset(s, 0, 1), InvalidArgument);
}

TEST(Continuation, ChainsInitialisationAndChecksShape) {
  Schedule none;
  none.adam_epochs = none.lbfgs_epochs = 0;
  const auto rungs = continuation_train({builtin("helmholtz-k3pi"), builtin("helmholtz-k5pi")}, 4, none);
  ASSERT_EQ(rungs.size(), 2u);
  EXPECT_EQ(rungs[0].init_from, "");
  EXPECT_EQ(rungs[1].init_from, "helmholtz-k3pi");
  EXPECT_EQ(rungs[1].model.get_params(), rungs[0].model.get_params());
  EXPECT_THROW(continuation_train({builtin("helmholtz-k3pi"), builtin("poisson-d3")}, 4, none), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto m = make_model(builtin("poisson-d3"), 9);
  std::stringstream ss;
  write_checkpoint(ss, m);
  const auto bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "FTTNNCKP");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 0);
  const auto back = read_checkpoint(ss);
  EXPECT_TRUE(back.same_shape(m));
  EXPECT_EQ(back.get_params(), m.get_params());
  EXPECT_EQ(back.core(1).boundary(), m.core(1).boundary());
  const std::vector<double> x{0.1, -0.4, 0.7};
  EXPECT_EQ(forward(back, x), forward(m, x));
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), InvalidArgument);
  std::stringstream ss;
  write_checkpoint(ss, FTTModel::init(uniform_ranks(2, 2), 3, 0));
  auto bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 4));
  EXPECT_THROW(read_checkpoint(truncated), InvalidArgument);
  bytes[8] = 2;
  std::stringstream version(bytes);
  EXPECT_THROW(read_checkpoint(version), InvalidArgument);
}

}  // namespace
}  // namespace fttnn
