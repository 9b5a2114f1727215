#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fttnn/assembly.hpp"
#include "fttnn/domain.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/ftt_model.hpp"
#include "fttnn/gradients.hpp"
#include "fttnn/optim.hpp"
#include "fttnn/rng.hpp"
#include "fttnn/separable.hpp"

namespace fttnn {

enum class ProblemKind { supervised, elliptic, eigenvalue };

inline const char* kind_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::supervised: return "supervised-approx";
    case ProblemKind::elliptic: return "elliptic";
    default: return "eigenvalue";
  }
}

struct BoundarySpec {
  bool hard = true;
  double beta = 100.0;  // soft only
  double dx = 0.1;      // soft only: rectangle-rule spacing
  SeparableField g;     // soft only: Dirichlet data; empty means zero
};

/// Monte-Carlo baseline settings attached to a problem.
struct BaselineSpec {
  int hidden = 100;
  std::size_t samples = 0;
};

struct ProblemSpec {
  std::string name;
  ProblemKind kind = ProblemKind::elliptic;
  BoxDomain domain;
  double c1 = 1.0;
  SeparableField b;
  SeparableField f;
  SeparableField V;
  BoundarySpec boundary;
  std::optional<SeparableField> exact;                          // closed form when separable
  std::function<double(std::span<const double>)> exact_value;   // always set when an exact solution exists
  std::optional<double> exact_lambda;
  int rank = 2;
  std::vector<int> ranks;  // full rank chain; overrides `rank` when set
  int hidden = 30;
  std::vector<std::vector<QuadratureSpec>> quadrature;  // per box, per dimension
  Schedule schedule;
  std::size_t n_samples = 0;  // supervised training set size
  BaselineSpec baseline;
  std::string continuation_parent;

  int dim() const { return domain.dim(); }
  bool has_exact() const { return static_cast<bool>(exact_value); }
};

struct EvalSpec {
  enum class Method { tensor_grid, random_uniform };
  Method method = Method::tensor_grid;
  int resolution = 101;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

/// Tensor grid of 101 per dimension for d <= 3, otherwise 1e5 uniform points with seed 0.
inline EvalSpec default_eval(int d) {
  EvalSpec e;
  e.method = d <= 3 ? EvalSpec::Method::tensor_grid : EvalSpec::Method::random_uniform;
  return e;
}

namespace detail {

constexpr double kPi = std::numbers::pi;

inline Factor1D one() { return Factor1D::constant(1.0); }

inline std::vector<QuadratureSpec> uniform_quad(int d, QuadratureSpec q) { return std::vector<QuadratureSpec>(d, q); }

inline ProblemSpec with_exact(ProblemSpec s, SeparableField u) {
  s.exact_value = [u](std::span<const double> x) { return u(x); };
  s.exact = std::move(u);
  return s;
}

inline ProblemSpec poisson(int d, int r, int h) {
  ProblemSpec s;
  s.name = "poisson-d" + std::to_string(d);
  s.domain = BoxDomain::cube(d, {-1.0, 1.0});
  s.rank = r;
  s.hidden = h;
  s.quadrature = {uniform_quad(d, {30, 30})};
  SeparableField u(d);
  for (int k = 0; k < d; ++k) {
    std::vector<Factor1D> fs(d, Factor1D::sin(kPi));
    fs[k] = Factor1D::sin(2 * kPi);
    u.add({1.0, fs});
  }
  s.f = u.scaled((d + 3) * kPi * kPi);
  s.baseline = {100, d == 3 ? 5000u : d == 5 ? 10000u : 20000u};
  return with_exact(std::move(s), u);
}

inline ProblemSpec helmholtz(int d, int r, int h) {
  ProblemSpec s;
  s.name = "helmholtz-d" + std::to_string(d);
  s.domain = BoxDomain::cube(d, {0.0, 1.0});
  s.rank = r;
  s.hidden = h;
  s.quadrature = {uniform_quad(d, {40, 40})};
  const SeparableField u(d, {{1.0, std::vector<Factor1D>(d, Factor1D::sin(2 * kPi))}});
  s.b = SeparableField::constant(d, -1.0);
  s.f = u.scaled(4 * kPi * kPi * d - 1.0);
  s.baseline = {100, d == 3 ? 5000u : 10000u};
  return with_exact(std::move(s), u);
}

inline ProblemSpec helmholtz_k(int m, const std::string& parent) {
  const int d = 3;
  const double k = m * kPi;
  ProblemSpec s;
  s.name = "helmholtz-k" + std::to_string(m) + "pi";
  s.domain = BoxDomain::cube(d, {0.0, 1.0});
  s.rank = 2;
  s.hidden = 40;
  s.quadrature = {uniform_quad(d, {40, 40})};
  s.b = SeparableField::constant(d, -k * k);
  s.f = SeparableField(d, {{2.0, std::vector<Factor1D>(d, Factor1D::sin(k))}});
  s.schedule.adam_epochs = 3000;
  s.schedule.adam_lr = 0.003;
  s.schedule.lbfgs_epochs = 2000;
  s.schedule.lbfgs_lr = 0.1;
  s.continuation_parent = parent;
  s.baseline = {100, 5000};
  return with_exact(std::move(s), SeparableField(d, {{1.0 / (k * k), std::vector<Factor1D>(d, Factor1D::sin(k))}}));
}

inline ProblemSpec lshape() {
  ProblemSpec s;
  s.name = "poisson-lshape";
  s.domain = BoxDomain({{{-1.0, 0.0}, {-1.0, 1.0}, {-1.0, 1.0}}, {{0.0, 1.0}, {0.0, 1.0}, {-1.0, 1.0}}});
  s.rank = 2;
  s.hidden = 50;
  const QuadratureSpec half{20, 20}, full{40, 20};
  s.quadrature = {{half, full, full}, {half, half, full}};
  s.boundary = {false, 100.0, 0.1, SeparableField(3)};
  const auto a = Factor1D::poly({0.0, 1.0, 0.0, -1.0});  // x - x^3
  const auto c = Factor1D::poly({1.0, 0.0, -1.0});       // 1 - x^2
  s.f = SeparableField(3, {{6.0, {Factor1D::poly({0.0, 1.0}), a, c}},
                           {6.0, {a, Factor1D::poly({0.0, 1.0}), c}},
                           {2.0, {a, a, one()}}});
  s.baseline = {90, 12000};
  return with_exact(std::move(s), SeparableField(3, {{1.0, {a, a, c}}}));
}

inline ProblemSpec schrodinger(int d, int r, int h, double lambda) {
  ProblemSpec s;
  s.name = "schrodinger-d" + std::to_string(d);
  s.kind = ProblemKind::eigenvalue;
  s.domain = BoxDomain::cube(d, {-1.0, 1.0});
  s.rank = r;
  s.hidden = h;
  s.quadrature = {uniform_quad(d, {20, 20})};
  s.V = SeparableField(d);
  for (int i = 0; i < d; ++i) {
    std::vector<Factor1D> fs(d, one());
    fs[i] = Factor1D::cos(kPi, kPi);
    s.V.add({1.0 / d, fs});
  }
  s.exact_lambda = lambda;
  s.schedule.adam_epochs = 3000;
  s.schedule.adam_lr = 1e-4;
  s.schedule.lbfgs_epochs = 4000;
  s.schedule.lbfgs_lr = 1e-4;
  s.baseline = {100, d == 5 ? 20000u : 50000u};
  return s;
}

inline ProblemSpec singular(int d, int r) {
  ProblemSpec s;
  s.name = "singular-approx-d" + std::to_string(d);
  s.kind = ProblemKind::supervised;
  s.domain = BoxDomain::cube(d, {-1.0, 1.0});
  s.rank = r;
  s.hidden = 30;
  s.n_samples = 100000;
  s.exact_value = [](std::span<const double> x) {
    double q = 0.0;
    for (double v : x) q += v * v;
    return 1.0 / std::sqrt(q + 1e-12);
  };
  return s;
}

}  // namespace detail

inline std::vector<std::string> builtin_names() {
  return {"singular-approx-d4", "singular-approx-d6", "poisson-lshape",     "poisson-d3",
          "poisson-d5",         "poisson-d7",         "helmholtz-d3",       "helmholtz-d5",
          "helmholtz-k3pi",     "helmholtz-k5pi",     "helmholtz-k10pi",    "helmholtz-k15pi",
          "helmholtz-k20pi",    "helmholtz-k25pi",    "schrodinger-d5",     "schrodinger-d10"};
}

inline ProblemSpec builtin(const std::string& name) {
  using namespace detail;
  if (name == "singular-approx-d4") return singular(4, 2);
  if (name == "singular-approx-d6") return singular(6, 3);
  if (name == "poisson-lshape") return lshape();
  if (name == "poisson-d3") return poisson(3, 2, 50);
  if (name == "poisson-d5") return poisson(5, 3, 40);
  if (name == "poisson-d7") return poisson(7, 4, 35);
  if (name == "helmholtz-d3") return helmholtz(3, 2, 40);
  if (name == "helmholtz-d5") return helmholtz(5, 3, 50);
  if (name == "helmholtz-k3pi") return helmholtz_k(3, "");
  if (name == "helmholtz-k5pi") return helmholtz_k(5, "helmholtz-k3pi");
  if (name == "helmholtz-k10pi") return helmholtz_k(10, "helmholtz-k5pi");
  if (name == "helmholtz-k15pi") return helmholtz_k(15, "helmholtz-k10pi");
  if (name == "helmholtz-k20pi") return helmholtz_k(20, "helmholtz-k15pi");
  if (name == "helmholtz-k25pi") return helmholtz_k(25, "helmholtz-k15pi");
  if (name == "schrodinger-d5") return schrodinger(5, 3, 50, 11.8345);
  if (name == "schrodinger-d10") return schrodinger(10, 5, 25, 24.1728);
  throw UnsupportedProblem("unknown problem '" + name + "'");
}

inline std::string describe(const ProblemSpec& s) {
  std::ostringstream os;
  os << s.name << " (r=" << s.rank << ", h=" << s.hidden << ") " << kind_name(s.kind) << ", d=" << s.dim();
  if (s.kind != ProblemKind::supervised) {
    os << ", quadrature";
    for (const auto& box : s.quadrature) {
      os << " [";
      for (std::size_t i = 0; i < box.size(); ++i) os << (i ? " " : "") << box[i].n_sub << "x" << box[i].n_pts;
      os << "]";
    }
  } else {
    os << ", " << s.n_samples << " samples";
  }
  if (s.kind != ProblemKind::supervised)
    os << (s.boundary.hard ? ", hard BC" : ", soft BC beta=" + std::to_string(static_cast<int>(s.boundary.beta)));
  if (s.exact_lambda) os << ", lambda1=" << *s.exact_lambda;
  return os.str();
}

inline std::vector<std::string> list_problems() {
  std::vector<std::string> out;
  for (const auto& n : builtin_names()) out.push_back(describe(builtin(n)));
  return out;
}

inline std::vector<Region> interior_regions(const ProblemSpec& s) { return interior_regions(s.domain, s.quadrature); }

inline std::vector<int> model_ranks(const ProblemSpec& s) {
  return s.ranks.empty() ? uniform_ranks(s.dim(), s.rank) : s.ranks;
}

/// Initial model: rank chain, hidden h, hard boundary factors on the box when requested.
inline FTTModel make_model(const ProblemSpec& s, std::uint64_t seed) {
  const int d = s.dim();
  std::vector<std::optional<Interval>> bnd;
  if (s.boundary.hard && s.kind != ProblemKind::supervised) {
    if (s.domain.boxes().size() != 1) throw UnsupportedProblem(s.name + ": hard boundary needs a single box");
    for (const auto& iv : s.domain.boxes()[0]) bnd.emplace_back(iv);
  }
  return FTTModel::init(model_ranks(s), s.hidden, derive_seed(seed, "init"), InitScheme::glorot_sine, bnd);
}

inline EllipticOperator elliptic_operator(const ProblemSpec& s) { return {s.c1, s.b, s.f}; }

/// Integral of (L u_exact - f)^2 by dense Gauss quadrature on a coarse grid (4 nodes per box per dimension).
inline double exact_residual_check(const ProblemSpec& s) {
  if (s.kind != ProblemKind::elliptic || !s.exact)
    throw InvalidArgument(s.name + ": exact_residual_check needs an elliptic problem with a separable exact solution");
  const auto& u = *s.exact;
  double total = 0.0;
  for (const auto& box : s.domain.boxes()) {
    const int d = s.dim();
    std::vector<Rule1D> rules;
    for (const auto& iv : box) rules.push_back(composite_grid(iv, 1, 4));
    std::vector<std::size_t> idx(d, 0);
    std::vector<double> x(d);
    while (true) {
      double w = 1.0;
      for (int i = 0; i < d; ++i) {
        x[i] = rules[i].nodes[idx[i]];
        w *= rules[i].weights[idx[i]];
      }
      const double bval = s.b.empty() ? 0.0 : s.b(x);
      const double fval = s.f.empty() ? 0.0 : s.f(x);
      const double r = -s.c1 * u.laplacian(x) + bval * u(x) - fval;
      total += w * r * r;
      int k = d - 1;
      for (; k >= 0; --k) {
        if (++idx[k] < rules[k].size()) break;
        idx[k] = 0;
      }
      if (k < 0) break;
    }
  }
  return total;
}

/// Evaluation points and cached exact values for the relative L2 error.
class ErrorEvaluator {
 public:
  ErrorEvaluator(const ProblemSpec& s, EvalSpec e) : d_(s.dim()), spec_(e) {
    if (!s.has_exact()) throw InvalidArgument(s.name + ": no exact solution for relative error");
    const Box bb = s.domain.bounding_box();
    if (e.method == EvalSpec::Method::tensor_grid) {
      if (e.resolution < 2) throw InvalidArgument("eval: resolution must be >= 2");
      nodes_.resize(d_);
      for (int i = 0; i < d_; ++i)
        for (int k = 0; k < e.resolution; ++k)
          nodes_[i].push_back(bb[i].a + (bb[i].b - bb[i].a) * k / (e.resolution - 1));
      double total = 1.0;
      for (const auto& n : nodes_) total *= static_cast<double>(n.size());
      if (total > 1e8) throw ResourceError("eval: tensor grid exceeds 1e8 points");
      const auto count = static_cast<std::size_t>(total);
      std::vector<std::size_t> idx(d_, 0);
      std::vector<double> x(d_);
      for (std::size_t flat = 0; flat < count; ++flat) {
        for (int i = 0; i < d_; ++i) x[i] = nodes_[i][idx[i]];
        if (s.domain.contains(x)) {
          mask_.push_back(flat);
          exact_.push_back(s.exact_value(x));
        }
        for (int i = d_ - 1; i >= 0; --i) {
          if (++idx[i] < nodes_[i].size()) break;
          idx[i] = 0;
        }
      }
    } else {
      if (e.samples < 1) throw InvalidArgument("eval: sample count must be >= 1");
      auto rng = make_rng(e.seed, "eval");
      std::vector<std::uniform_real_distribution<double>> dist;
      for (const auto& iv : bb) dist.emplace_back(iv.a, iv.b);
      std::vector<double> x(d_);
      while (exact_.size() < e.samples) {
        for (int i = 0; i < d_; ++i) x[i] = dist[i](rng);
        if (!s.domain.contains(x)) continue;
        points_.insert(points_.end(), x.begin(), x.end());
        exact_.push_back(s.exact_value(x));
      }
    }
    double nrm = 0.0;
    for (double v : exact_) nrm += v * v;
    norm_ = std::sqrt(nrm);
    if (norm_ < 1e-14) throw UndefinedMetric(s.name + ": exact solution norm below 1e-14 on the evaluation set");
  }

  double operator()(const FTTModel& model) const {
    std::vector<double> vals;
    if (spec_.method == EvalSpec::Method::tensor_grid) {
      const auto all = eval_grid(model, nodes_);
      vals.reserve(mask_.size());
      for (std::size_t k : mask_) vals.push_back(all[k]);
    } else {
      vals = eval_points(model, points_);
    }
    return from_values(vals);
  }

  /// Relative error of an arbitrary pointwise evaluator.
  double operator()(const std::function<double(std::span<const double>)>& u) const {
    std::vector<double> vals;
    vals.reserve(exact_.size());
    for_each_point([&](std::span<const double> x) { vals.push_back(u(x)); });
    return from_values(vals);
  }

  std::size_t size() const { return exact_.size(); }

  /// Calls fn on each evaluation point, in the order of the cached exact values.
  void for_each_point(const std::function<void(std::span<const double>)>& fn) const {
    std::vector<double> x(d_);
    if (spec_.method == EvalSpec::Method::tensor_grid) {
      for (std::size_t flat : mask_) {
        std::size_t rem = flat;
        for (int i = d_ - 1; i >= 0; --i) {
          x[i] = nodes_[i][rem % nodes_[i].size()];
          rem /= nodes_[i].size();
        }
        fn(x);
      }
    } else {
      for (std::size_t p = 0; p < exact_.size(); ++p)
        fn(std::span<const double>(points_).subspan(p * d_, d_));
    }
  }

 private:
  double from_values(const std::vector<double>& vals) const {
    double num = 0.0;
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double e = vals[k] - exact_[k];
      num += e * e;
    }
    const double r = std::sqrt(num) / norm_;
    if (!std::isfinite(r)) throw NumericalFailure("relative error is not finite");
    return r;
  }

  int d_;
  EvalSpec spec_;
  std::vector<std::vector<double>> nodes_;
  std::vector<std::size_t> mask_;
  std::vector<double> points_;
  std::vector<double> exact_;
  double norm_ = 0.0;
};

inline double relative_error(const FTTModel& model, const ProblemSpec& s, const EvalSpec& e) {
  return ErrorEvaluator(s, e)(model);
}

inline double relative_error(const FTTModel& model, const ProblemSpec& s) {
  return relative_error(model, s, default_eval(s.dim()));
}

/// Uniform samples in the problem domain (row-major n x d) and their exact labels.
inline std::pair<std::vector<double>, std::vector<double>> supervised_dataset(const ProblemSpec& s, std::size_t n,
                                                                              std::uint64_t seed) {
  if (!s.has_exact()) throw InvalidArgument(s.name + ": labels need an exact solution");
  if (n == 0) throw InvalidArgument(s.name + ": empty dataset");
  auto rng = make_rng(seed, "data");
  const Box bb = s.domain.bounding_box();
  const int d = s.dim();
  std::vector<std::uniform_real_distribution<double>> dist;
  for (const auto& iv : bb) dist.emplace_back(iv.a, iv.b);
  std::vector<double> pts, labels;
  std::vector<double> x(d);
  while (labels.size() < n) {
    for (int i = 0; i < d; ++i) x[i] = dist[i](rng);
    if (!s.domain.contains(x)) continue;
    pts.insert(pts.end(), x.begin(), x.end());
    labels.push_back(s.exact_value(x));
  }
  return {std::move(pts), std::move(labels)};
}

inline double supervised_loss(const FTTModel& model, const std::vector<double>& points,
                              const std::vector<double>& labels) {
  return SupervisedObjective(model.dim(), points, labels).evaluate(model, {});
}

/// The training objective: residual (+ beta * boundary), Rayleigh quotient, or MSE.
inline std::shared_ptr<Objective> make_objective(const ProblemSpec& s, std::uint64_t seed = 0) {
  const int d = s.dim();
  switch (s.kind) {
    case ProblemKind::supervised: {
      auto [pts, labels] = supervised_dataset(s, s.n_samples, seed);
      return std::make_shared<SupervisedObjective>(d, std::move(pts), std::move(labels));
    }
    case ProblemKind::eigenvalue:
      return std::make_shared<RayleighObjective>(energy_functionals(s.V, interior_regions(s), d));
    default: break;
  }
  auto residual =
      std::make_shared<FunctionalObjective>(residual_functional(elliptic_operator(s), interior_regions(s), d), "residual");
  if (s.boundary.hard) return residual;
  auto sum = std::make_shared<WeightedSum>();
  sum->add(1.0, residual);
  auto g = s.boundary.g.empty() ? SeparableField(d) : s.boundary.g;
  sum->add(s.boundary.beta, std::make_shared<FunctionalObjective>(
                                boundary_functional(g, boundary_regions(s.domain, s.boundary.dx), d), "boundary"));
  return sum;
}

inline double residual_loss(const FTTModel& model, const ProblemSpec& s) {
  return residual_loss(model, elliptic_operator(s), interior_regions(s));
}

/// Soft-penalty boundary mismatch (without beta); zero for hard-BC models.
inline double boundary_loss(const FTTModel& model, const ProblemSpec& s) {
  const auto g = s.boundary.g.empty() ? SeparableField(s.dim()) : s.boundary.g;
  return boundary_loss_soft(model, s.domain, s.boundary.dx, g);
}

inline double rayleigh(const FTTModel& model, const ProblemSpec& s) {
  if (s.kind != ProblemKind::eigenvalue) throw InvalidArgument(s.name + ": rayleigh needs an eigenvalue problem");
  return RayleighObjective(energy_functionals(s.V, interior_regions(s), s.dim())).evaluate(model, {});
}

struct ContinuationRung {
  std::string name;
  std::string init_from;  // empty = default initialization
  FTTModel model;
  double rel_error = 0.0;
  TrainResult train;
};

/// Trains each spec in turn, initialising from its continuation parent when that
/// parent was trained earlier in the sequence, else from the previous rung.
inline std::vector<ContinuationRung> continuation_train(const std::vector<ProblemSpec>& specs, std::uint64_t seed,
                                                        const std::optional<Schedule>& schedule = std::nullopt,
                                                        std::ostream* log = nullptr) {
  std::vector<ContinuationRung> rungs;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    FTTModel model = make_model(s, seed);
    std::string from;
    if (k > 0) {
      const ContinuationRung* src = &rungs.back();
      for (const auto& r : rungs)
        if (r.name == s.continuation_parent) src = &r;
      if (!src->model.same_shape(model))
        throw InvalidArgument("continuation: " + s.name + " does not share the shape of " + src->name);
      model = src->model;
      from = src->name;
    }
    const auto obj = make_objective(s, seed);
    const ErrorEvaluator err(s, default_eval(s.dim()));
    TrainHooks hooks;
    hooks.log = log;
    auto res = train(model, *obj, schedule.value_or(s.schedule), hooks,
                     [&](const FTTModel& m) { return err(m); });
    const double rel = err(model);
    if (log) *log << s.name << " (init: " << (from.empty() ? "default" : from) << ") rel_error " << rel << '\n';
    rungs.push_back({s.name, from, std::move(model), rel, std::move(res)});
  }
  return rungs;
}

}  // namespace fttnn
