#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fttnn/assembly.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/ftt_model.hpp"

namespace fttnn {

enum class Layer { w1, b1, w2, b2 };

inline const char* layer_name(Layer l) {
  switch (l) {
    case Layer::w1: return "W1";
    case Layer::b1: return "b1";
    case Layer::w2: return "W2";
    default: return "b2";
  }
}

/// Position of one parameter: core, layer, and offset within that layer (W2 row-major).
struct ParamIndex {
  int core = 0;
  Layer layer = Layer::w1;
  std::size_t position = 0;

  bool operator==(const ParamIndex&) const = default;
};

inline std::size_t flat_index(const FTTModel& model, const ParamIndex& p) {
  const auto& c = model.core(p.core);
  const std::size_t h = static_cast<std::size_t>(c.hidden());
  const std::size_t out = static_cast<std::size_t>(c.outputs());
  const std::size_t sizes[4] = {h, h, out * h, out};
  const auto li = static_cast<std::size_t>(p.layer);
  if (p.position >= sizes[li]) throw InvalidArgument("flat_index: position out of range");
  std::size_t off = model.param_offset(p.core);
  for (std::size_t l = 0; l < li; ++l) off += sizes[l];
  return off + p.position;
}

inline ParamIndex param_index(const FTTModel& model, std::size_t flat) {
  if (flat >= model.param_count()) throw InvalidArgument("param_index: flat index out of range");
  int i = 0;
  while (i + 1 < model.dim() && model.param_offset(i + 1) <= flat) ++i;
  const auto& c = model.core(i);
  const std::size_t h = static_cast<std::size_t>(c.hidden());
  const std::size_t out = static_cast<std::size_t>(c.outputs());
  const std::size_t sizes[4] = {h, h, out * h, out};
  std::size_t rem = flat - model.param_offset(i);
  int l = 0;
  while (rem >= sizes[l]) rem -= sizes[l++];
  return {i, static_cast<Layer>(l), rem};
}

/// A differentiable scalar loss of an FTT model.
class Objective {
 public:
  virtual ~Objective() = default;

  /// Returns the loss; when `grad` is non-empty it is overwritten with the gradient.
  virtual double evaluate(const FTTModel& model, std::span<double> grad) const = 0;
  virtual std::string name() const = 0;
};

namespace detail {

inline void check_finite(double value, std::span<const double> grad, const std::string& what) {
  if (!std::isfinite(value)) throw NumericalFailure(what + ": loss is not finite");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i])) throw NumericalFailure(what + ": gradient entry " + std::to_string(i) + " is not finite");
}

inline void zero_fill(std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); }

}  // namespace detail

/// scale * functional(model).
class FunctionalObjective final : public Objective {
 public:
  FunctionalObjective(AssembledFunctional fn, std::string name, double scale = 1.0)
      : fn_(std::move(fn)), name_(std::move(name)), scale_(scale) {}

  double evaluate(const FTTModel& model, std::span<double> grad) const override {
    double v;
    if (grad.empty()) {
      v = fn_.value(model);
    } else {
      if (grad.size() != model.param_count()) throw InvalidArgument(name_ + ": gradient size mismatch");
      detail::zero_fill(grad);
      v = fn_.value_and_grad(model, grad);
      for (auto& g : grad) g *= scale_;
    }
    v *= scale_;
    if (!std::isfinite(v) || !std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); }))
      throw NumericalFailure(name_ + ": " + offending_term(model));
    return v;
  }

  std::string name() const override { return name_; }
  const AssembledFunctional& functional() const { return fn_; }

 private:
  std::string offending_term(const FTTModel& model) const {
    try {
      const auto vals = fn_.term_values(model);
      for (std::size_t t = 0; t < vals.size(); ++t)
        if (!std::isfinite(vals[t])) return "term '" + fn_.term_label(t) + "' is not finite";
    } catch (const NumericalFailure& e) {
      return e.what();
    }
    return "gradient is not finite";
  }

  AssembledFunctional fn_;
  std::string name_;
  double scale_;
};

/// (dirichlet + potential) / mass.
class RayleighObjective final : public Objective {
 public:
  explicit RayleighObjective(EnergyFunctionals e) : e_(std::move(e)) {}

  double evaluate(const FTTModel& model, std::span<double> grad) const override {
    if (!grad.empty() && grad.size() != model.param_count())
      throw InvalidArgument("rayleigh: gradient size mismatch");
    const AssembledFunctional* fns[] = {&e_.dirichlet, &e_.potential, &e_.mass};
    double q = 0.0;
    const auto weights = [&q](const std::vector<double>& v) {
      check_mass(v[2]);
      q = (v[0] + v[1]) / v[2];
      return std::vector<double>{1.0 / v[2], 1.0 / v[2], -q / v[2]};
    };
    if (!grad.empty()) detail::zero_fill(grad);
    const auto v = AssembledFunctional::group_values(model, fns, grad, weights);
    if (grad.empty()) weights(v);
    detail::check_finite(q, grad, "rayleigh");
    return q;
  }

  std::string name() const override { return "rayleigh"; }
  const EnergyFunctionals& energy() const { return e_; }

 private:
  static void check_mass(double mass) {
    if (!(mass > 1e-12)) throw DegenerateModel("rayleigh: mass integral " + std::to_string(mass) + " is below 1e-12");
  }

  EnergyFunctionals e_;
};

/// Mean squared error of the model against labelled points (row-major n x d).
class SupervisedObjective final : public Objective {
 public:
  SupervisedObjective(int dim, std::vector<double> points, std::vector<double> labels)
      : dim_(dim), labels_(std::move(labels)) {
    if (dim < 1) throw InvalidArgument("supervised: dim must be >= 1");
    if (labels_.empty()) throw InvalidArgument("supervised: empty dataset");
    if (points.size() != labels_.size() * static_cast<std::size_t>(dim))
      throw InvalidArgument("supervised: points and labels disagree in size");
    coords_.assign(dim, std::vector<double>(labels_.size()));
    for (std::size_t p = 0; p < labels_.size(); ++p)
      for (int i = 0; i < dim; ++i) coords_[i][p] = points[p * dim + i];
  }

  double evaluate(const FTTModel& model, std::span<double> grad) const override {
    if (model.dim() != dim_) throw InvalidArgument("supervised: model dimension mismatch");
    const auto n = static_cast<Eigen::Index>(labels_.size());
    const int d = dim_;
    const auto& r = model.ranks();
    std::vector<CoreBatch> batches(d);
    for (int i = 0; i < d; ++i) batches[i] = model.core(i).evaluate(coords_[i], 0);

    // left[i] (n x r_i): product of cores 0..i-1 at each point, row-wise.
    std::vector<Eigen::MatrixXd> left(d + 1);
    left[0] = Eigen::MatrixXd::Ones(n, 1);
    for (int i = 0; i < d; ++i) left[i + 1] = chain_right(left[i], batches[i].values[0], r[i], r[i + 1]);
    Eigen::VectorXd resid(n);
    for (Eigen::Index p = 0; p < n; ++p) resid[p] = left[d](p, 0) - labels_[static_cast<std::size_t>(p)];
    const double loss = resid.squaredNorm() / static_cast<double>(n);
    if (grad.empty()) {
      detail::check_finite(loss, {}, "supervised");
      return loss;
    }
    if (grad.size() != model.param_count()) throw InvalidArgument("supervised: gradient size mismatch");
    detail::zero_fill(grad);
    const Eigen::VectorXd scale = resid * (2.0 / static_cast<double>(n));
    // right (n x r_{i+1}): product of cores i+1..d-1 at each point.
    Eigen::MatrixXd right = Eigen::MatrixXd::Ones(n, 1);
    for (int i = d - 1; i >= 0; --i) {
      const int rows = r[i], cols = r[i + 1];
      CoreAdjoint adj;
      adj[0].resize(n, rows * cols);
      for (int a = 0; a < rows; ++a)
        for (int b = 0; b < cols; ++b)
          adj[0].col(a * cols + b) = scale.cwiseProduct(left[i].col(a)).cwiseProduct(right.col(b));
      model.core(i).backward(batches[i], adj, grad.subspan(model.param_offset(i), model.core(i).param_count()));
      Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n, rows);
      for (int a = 0; a < rows; ++a)
        for (int b = 0; b < cols; ++b) next.col(a) += batches[i].values[0].col(a * cols + b).cwiseProduct(right.col(b));
      right = std::move(next);
    }
    detail::check_finite(loss, grad, "supervised");
    return loss;
  }

  std::string name() const override { return "supervised"; }
  std::size_t size() const { return labels_.size(); }

 private:
  static Eigen::MatrixXd chain_right(const Eigen::MatrixXd& left, const Eigen::MatrixXd& core, int rows, int cols) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(left.rows(), cols);
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b) out.col(b) += left.col(a).cwiseProduct(core.col(a * cols + b));
    return out;
  }

  int dim_;
  std::vector<std::vector<double>> coords_;
  std::vector<double> labels_;
};

/// sum_j w_j * L_j.
class WeightedSum final : public Objective {
 public:
  void add(double weight, std::shared_ptr<const Objective> obj) { parts_.emplace_back(weight, std::move(obj)); }
  const std::vector<std::pair<double, std::shared_ptr<const Objective>>>& parts() const { return parts_; }

  double evaluate(const FTTModel& model, std::span<double> grad) const override {
    if (!grad.empty()) detail::zero_fill(grad);
    std::vector<double> buf(grad.empty() ? 0 : grad.size());
    double total = 0.0;
    for (const auto& [w, obj] : parts_) {
      total += w * obj->evaluate(model, buf);
      for (std::size_t i = 0; i < buf.size(); ++i) grad[i] += w * buf[i];
    }
    return total;
  }

  std::string name() const override {
    std::string s;
    for (const auto& [w, obj] : parts_) s += (s.empty() ? "" : "+") + obj->name();
    return s;
  }

 private:
  std::vector<std::pair<double, std::shared_ptr<const Objective>>> parts_;
};

inline std::pair<double, std::vector<double>> loss_and_grad(const Objective& obj, const FTTModel& model) {
  std::vector<double> g(model.param_count(), 0.0);
  const double v = obj.evaluate(model, g);
  return {v, std::move(g)};
}

}  // namespace fttnn
