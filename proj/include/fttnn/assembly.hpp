#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fttnn/core_network.hpp"
#include "fttnn/domain.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/ftt_model.hpp"
#include "fttnn/quadrature.hpp"
#include "fttnn/separable.hpp"

namespace fttnn {

/// One Kronecker factor inside a dimension slice: the dimension's core (with a
/// derivative order) or a univariate field factor.
struct Constituent {
  enum class Kind { core, field };

  Kind kind = Kind::core;
  int order = 0;
  Factor1D field = Factor1D::constant(1.0);

  static Constituent core(int order = 0) { return {Kind::core, order, Factor1D::constant(1.0)}; }
  static Constituent field_factor(Factor1D f, int order = 0) { return {Kind::field, order, std::move(f)}; }
};

using FactorSlice = std::vector<Constituent>;

/// Integrand of one TT term: per dimension, the ordered Kronecker constituents.
struct FactorSpec {
  std::vector<FactorSlice> dims;
};

namespace detail {

/// A slice reduced to its core derivative orders plus non-constant field factors.
struct SliceKey {
  std::vector<int> core_orders;
  std::vector<std::pair<Factor1D, int>> fields;

  bool operator==(const SliceKey&) const = default;

  int max_order() const {
    int m = -1;
    for (int o : core_orders) m = std::max(m, o);
    return m;
  }
};

/// Splits a slice into its key and a scalar that collects constant field factors.
inline std::pair<SliceKey, double> normalize(const FactorSlice& slice) {
  SliceKey key;
  double scale = 1.0;
  for (const auto& c : slice) {
    if (c.order < 0 || c.order > 2) throw InvalidArgument("constituent derivative order must be 0, 1 or 2");
    if (c.kind == Constituent::Kind::core) {
      key.core_orders.push_back(c.order);
    } else if (c.field.is_constant()) {
      scale *= (c.order == 0) ? c.field.constant_value() : 0.0;
    } else {
      key.fields.emplace_back(c.field, c.order);
    }
  }
  return {key, scale};
}

inline Eigen::VectorXd field_weights(const SliceKey& key, const Rule1D& rule) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(rule.size()));
  for (std::size_t k = 0; k < rule.size(); ++k) {
    double v = rule.weights[k];
    for (const auto& [f, order] : key.fields) v *= f(rule.nodes[k], order);
    w[static_cast<Eigen::Index>(k)] = v;
  }
  return w;
}

/// sum_k w_k (A_1(x_k) kron A_2(x_k) kron ...) for the core constituents of `key`.
inline Eigen::MatrixXd slice_matrix(const SliceKey& key, const Eigen::VectorXd& w, const CoreBatch* batch, int rows,
                                    int cols) {
  const auto& orders = key.core_orders;
  const std::size_t J = orders.size();
  if (J == 0) return Eigen::MatrixXd::Constant(1, 1, w.sum());
  const auto& V = batch->values;
  if (J == 1) {
    const Eigen::VectorXd flat = V[orders[0]].transpose() * w;
    Eigen::MatrixXd m(rows, cols);
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b) m(a, b) = flat[a * cols + b];
    return m;
  }
  if (J == 2) {
    const Eigen::MatrixXd q = V[orders[0]].transpose() * (w.asDiagonal() * V[orders[1]]);
    Eigen::MatrixXd m(rows * rows, cols * cols);
    for (int a1 = 0; a1 < rows; ++a1)
      for (int a2 = 0; a2 < rows; ++a2)
        for (int b1 = 0; b1 < cols; ++b1)
          for (int b2 = 0; b2 < cols; ++b2) m(a1 * rows + a2, b1 * cols + b2) = q(a1 * cols + b1, a2 * cols + b2);
    return m;
  }
  // General Kronecker chain, mixed-radix indices with the last constituent fastest.
  Eigen::Index R = 1, C = 1;
  for (std::size_t j = 0; j < J; ++j) {
    R *= rows;
    C *= cols;
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(R, C);
  std::vector<int> sub(J);
  for (Eigen::Index row = 0; row < R; ++row)
    for (Eigen::Index col = 0; col < C; ++col) {
      Eigen::Index rr = row, cc = col;
      for (std::size_t j = J; j-- > 0;) {
        sub[j] = static_cast<int>((rr % rows) * cols + (cc % cols));
        rr /= rows;
        cc /= cols;
      }
      double acc = 0.0;
      for (Eigen::Index k = 0; k < w.size(); ++k) {
        double p = w[k];
        for (std::size_t j = 0; j < J; ++j) p *= V[orders[j]](k, sub[j]);
        acc += p;
      }
      m(row, col) = acc;
    }
  return m;
}

/// Adds the per-node adjoints implied by d(loss)/d(slice matrix) = gbar into `adj`.
inline void slice_backward(const SliceKey& key, const Eigen::VectorXd& w, const CoreBatch& batch, int rows, int cols,
                           const Eigen::MatrixXd& gbar, CoreAdjoint& adj) {
  const auto& orders = key.core_orders;
  const std::size_t J = orders.size();
  if (J == 0) return;
  const auto& V = batch.values;
  const int r = rows * cols;
  if (J == 1) {
    Eigen::RowVectorXd flat(r);
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b) flat[a * cols + b] = gbar(a, b);
    adj[orders[0]].noalias() += w * flat;
    return;
  }
  if (J == 2) {
    Eigen::MatrixXd qbar(r, r);
    for (int a1 = 0; a1 < rows; ++a1)
      for (int a2 = 0; a2 < rows; ++a2)
        for (int b1 = 0; b1 < cols; ++b1)
          for (int b2 = 0; b2 < cols; ++b2) qbar(a1 * cols + b1, a2 * cols + b2) = gbar(a1 * rows + a2, b1 * cols + b2);
    adj[orders[0]].noalias() += w.asDiagonal() * (V[orders[1]] * qbar.transpose());
    adj[orders[1]].noalias() += w.asDiagonal() * (V[orders[0]] * qbar);
    return;
  }
  std::vector<int> sub(J);
  for (Eigen::Index row = 0; row < gbar.rows(); ++row)
    for (Eigen::Index col = 0; col < gbar.cols(); ++col) {
      const double g = gbar(row, col);
      if (g == 0.0) continue;
      Eigen::Index rr = row, cc = col;
      for (std::size_t j = J; j-- > 0;) {
        sub[j] = static_cast<int>((rr % rows) * cols + (cc % cols));
        rr /= rows;
        cc /= cols;
      }
      for (Eigen::Index k = 0; k < w.size(); ++k)
        for (std::size_t j = 0; j < J; ++j) {
          double p = w[k] * g;
          for (std::size_t l = 0; l < J; ++l)
            if (l != j) p *= V[orders[l]](k, sub[l]);
          adj[orders[j]](k, sub[j]) += p;
        }
    }
}

}  // namespace detail

/// Weighted Kronecker dimension factor  sum_k w_k (A^(1)(x_k) kron A^(2)(x_k) kron ...).
inline Eigen::MatrixXd dim_factor(const CoreNetwork& core, const FactorSlice& slice, const Rule1D& rule) {
  if (rule.size() == 0) throw InvalidArgument("dim_factor: empty quadrature rule");
  const auto [key, scale] = detail::normalize(slice);
  const Eigen::VectorXd w = detail::field_weights(key, rule) * scale;
  CoreBatch batch;
  if (!key.core_orders.empty()) batch = core.evaluate(rule.nodes, key.max_order());
  return detail::slice_matrix(key, w, &batch, core.rows(), core.cols());
}

/// Linear combination of TT-assembled integrals over a union of tensor-product regions.
///
/// Each term is coeff * sum_regions prod_i M_i, where M_i is the dimension factor
/// of the term's slice in dimension i. Slices are deduplicated per dimension so a
/// factor shared by many terms (e.g. u_i kron u_i) is assembled once per call.
class AssembledFunctional {
 public:
  using GroupWeights = std::function<std::vector<double>(const std::vector<double>&)>;

  AssembledFunctional(int dim, std::vector<Region> regions) : dim_(dim), regions_(std::move(regions)) {
    if (dim < 1) throw InvalidArgument("AssembledFunctional: dim must be >= 1");
    for (const auto& r : regions_)
      if (static_cast<int>(r.rules.size()) != dim) throw InvalidArgument("AssembledFunctional: region dimension mismatch");
    keys_.resize(dim);
    weights_.resize(regions_.size(), std::vector<std::vector<Eigen::VectorXd>>(dim));
  }

  int dim() const { return dim_; }
  const std::vector<Region>& regions() const { return regions_; }
  std::size_t term_count() const { return terms_.size(); }
  const std::string& term_label(std::size_t t) const { return terms_.at(t).label; }
  double term_coeff(std::size_t t) const { return terms_.at(t).coeff; }
  double constant() const { return constant_; }

  void add_term(double coeff, const FactorSpec& spec, std::string label = {}) {
    if (static_cast<int>(spec.dims.size()) != dim_)
      throw InvalidArgument("add_term: spec has " + std::to_string(spec.dims.size()) + " dimensions, expected " +
                            std::to_string(dim_));
    Term term{coeff, std::vector<int>(dim_), std::move(label)};
    for (int i = 0; i < dim_; ++i) {
      auto [key, scale] = detail::normalize(spec.dims[i]);
      term.coeff *= scale;
      term.slice[i] = intern(i, std::move(key));
    }
    terms_.push_back(std::move(term));
  }

  void add_constant(double c) { constant_ += c; }

  double value(const FTTModel& model) const { return evaluate(model, {}, nullptr); }

  /// Value; adds the exact parameter gradient into `grad` (flat, model order).
  double value_and_grad(const FTTModel& model, std::span<double> grad) const {
    if (grad.size() != model.param_count()) throw InvalidArgument("value_and_grad: gradient size mismatch");
    return evaluate(model, grad, nullptr);
  }

  /// Values of functionals sharing dimension and regions, with one core evaluation per node.
  /// When `grad` is non-empty, adds sum_g weights(values)[g] * dF_g/dtheta into it.
  static std::vector<double> group_values(const FTTModel& model, std::span<const AssembledFunctional* const> fns,
                                          std::span<double> grad = {}, const GroupWeights& weights = {}) {
    if (!grad.empty() && grad.size() != model.param_count())
      throw InvalidArgument("group_values: gradient size mismatch");
    if (!grad.empty() && !weights) throw InvalidArgument("group_values: gradient requested without weights");
    return run_group(model, fns, grad, nullptr, weights);
  }

  /// Integral of each term (coefficient included), summed over regions.
  std::vector<double> term_values(const FTTModel& model) const {
    std::vector<double> out(terms_.size(), 0.0);
    evaluate(model, {}, &out);
    return out;
  }

  /// Sums term values by label prefix (text before '['), plus "constant".
  std::map<std::string, double> breakdown(const FTTModel& model) const {
    std::map<std::string, double> out;
    const auto vals = term_values(model);
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      const auto& label = terms_[t].label;
      out[label.substr(0, label.find('['))] += vals[t];
    }
    if (constant_ != 0.0) out["constant"] += constant_;
    return out;
  }

 private:
  struct Term {
    double coeff;
    std::vector<int> slice;
    std::string label;
  };

  int intern(int i, detail::SliceKey key) {
    auto& ks = keys_[i];
    for (std::size_t s = 0; s < ks.size(); ++s)
      if (ks[s] == key) return static_cast<int>(s);
    for (std::size_t r = 0; r < regions_.size(); ++r)
      weights_[r][i].push_back(detail::field_weights(key, regions_[r].rules[i]));
    ks.push_back(std::move(key));
    return static_cast<int>(ks.size() - 1);
  }

  double evaluate(const FTTModel& model, std::span<double> grad, std::vector<double>* per_term) const {
    const AssembledFunctional* self = this;
    const auto w = [](const std::vector<double>&) { return std::vector<double>{1.0}; };
    return run_group(model, std::span(&self, 1), grad, per_term, w)[0];
  }

  using Mats = std::vector<std::vector<Eigen::MatrixXd>>;  // [dim][slice]

  Mats region_mats(const FTTModel& model, std::size_t r, const std::vector<CoreBatch>& batches) const {
    Mats mats(dim_);
    for (int i = 0; i < dim_; ++i) {
      const auto& core = model.core(i);
      mats[i].resize(keys_[i].size());
      for (std::size_t s = 0; s < keys_[i].size(); ++s)
        mats[i][s] = detail::slice_matrix(keys_[i][s], weights_[r][i][s], &batches[i], core.rows(), core.cols());
    }
    return mats;
  }

  double term_value(const Term& term, const Mats& mats, std::vector<Eigen::RowVectorXd>& left) const {
    left[0] = Eigen::RowVectorXd::Ones(1);
    for (int i = 0; i < dim_; ++i) {
      const auto& m = mats[i][term.slice[i]];
      if (m.rows() != left[i].size())
        throw InvalidArgument("term '" + term.label + "': Kronecker shape chain breaks at dimension " +
                              std::to_string(i));
      left[i + 1] = left[i] * m;
    }
    if (left[dim_].size() != 1) throw InvalidArgument("term '" + term.label + "': product does not collapse to 1 x 1");
    const double v = term.coeff * left[dim_](0);
    if (!std::isfinite(v)) throw NumericalFailure("term '" + term.label + "' is not finite");
    return v;
  }

  // Adds scale * d(value)/d(slice matrices) of every term into gbar.
  void accumulate_gbar(const Mats& mats, double scale, Mats& gbar) const {
    std::vector<Eigen::RowVectorXd> left(dim_ + 1);
    std::vector<Eigen::VectorXd> right(dim_ + 1);
    if (gbar.empty()) {
      gbar.resize(dim_);
      for (int i = 0; i < dim_; ++i) {
        gbar[i].resize(keys_[i].size());
        for (std::size_t s = 0; s < keys_[i].size(); ++s)
          gbar[i][s] = Eigen::MatrixXd::Zero(mats[i][s].rows(), mats[i][s].cols());
      }
    }
    for (const Term& term : terms_) {
      if (term.coeff == 0.0) continue;
      term_value(term, mats, left);
      right[dim_] = Eigen::VectorXd::Ones(1);
      for (int i = dim_; i-- > 0;) right[i] = mats[i][term.slice[i]] * right[i + 1];
      for (int i = 0; i < dim_; ++i)
        gbar[i][term.slice[i]].noalias() += (scale * term.coeff) * (left[i].transpose() * right[i + 1].transpose());
    }
  }

  static bool same_regions(const std::vector<Region>& a, const std::vector<Region>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t r = 0; r < a.size(); ++r) {
      if (a[r].rules.size() != b[r].rules.size()) return false;
      for (std::size_t i = 0; i < a[r].rules.size(); ++i)
        if (a[r].rules[i].nodes != b[r].rules[i].nodes || a[r].rules[i].weights != b[r].rules[i].weights) return false;
    }
    return true;
  }

  static std::vector<double> run_group(const FTTModel& model, std::span<const AssembledFunctional* const> fns,
                                       std::span<double> grad, std::vector<double>* per_term,
                                       const GroupWeights& weights) {
    if (fns.empty()) throw InvalidArgument("AssembledFunctional: empty group");
    const AssembledFunctional& head = *fns[0];
    const int dim = head.dim_;
    if (model.dim() != dim)
      throw InvalidArgument("AssembledFunctional: model dimension " + std::to_string(model.dim()) + " != " +
                            std::to_string(dim));
    for (const auto* f : fns)
      if (f != &head && (f->dim_ != dim || !same_regions(f->regions_, head.regions_)))
        throw InvalidArgument("AssembledFunctional: grouped functionals must share dimension and regions");

    std::vector<int> max_order(dim, -1);
    for (const auto* f : fns)
      for (int i = 0; i < dim; ++i)
        for (const auto& k : f->keys_[i]) max_order[i] = std::max(max_order[i], k.max_order());

    const std::size_t nr = head.regions_.size();
    std::vector<std::vector<CoreBatch>> batches(nr, std::vector<CoreBatch>(dim));
    std::vector<std::vector<Mats>> mats(nr);  // [region][functional]
    std::vector<double> values(fns.size());
    for (std::size_t f = 0; f < fns.size(); ++f) values[f] = fns[f]->constant_;
    std::vector<Eigen::RowVectorXd> left(dim + 1);
    for (std::size_t r = 0; r < nr; ++r) {
      for (int i = 0; i < dim; ++i)
        if (max_order[i] >= 0) batches[r][i] = model.core(i).evaluate(head.regions_[r].rules[i].nodes, max_order[i]);
      for (std::size_t f = 0; f < fns.size(); ++f) {
        mats[r].push_back(fns[f]->region_mats(model, r, batches[r]));
        for (std::size_t t = 0; t < fns[f]->terms_.size(); ++t) {
          const double v = fns[f]->term_value(fns[f]->terms_[t], mats[r][f], left);
          values[f] += v;
          if (per_term && f == 0) (*per_term)[t] += v;
        }
      }
    }
    if (grad.empty()) return values;

    const std::vector<double> w = weights(values);
    if (w.size() != fns.size()) throw InvalidArgument("AssembledFunctional: group weight count mismatch");
    for (std::size_t r = 0; r < nr; ++r) {
      std::vector<Mats> gbar(fns.size());
      for (std::size_t f = 0; f < fns.size(); ++f)
        if (w[f] != 0.0) fns[f]->accumulate_gbar(mats[r][f], w[f], gbar[f]);
      for (int i = 0; i < dim; ++i) {
        if (max_order[i] < 0) continue;
        const auto& core = model.core(i);
        const CoreBatch& batch = batches[r][i];
        CoreAdjoint adj;
        for (int o = 0; o <= max_order[i]; ++o) adj[o] = Eigen::MatrixXd::Zero(batch.size(), core.outputs());
        for (std::size_t f = 0; f < fns.size(); ++f) {
          if (gbar[f].empty()) continue;
          const auto& fn = *fns[f];
          for (std::size_t s = 0; s < fn.keys_[i].size(); ++s)
            detail::slice_backward(fn.keys_[i][s], fn.weights_[r][i][s], batch, core.rows(), core.cols(), gbar[f][i][s],
                                   adj);
        }
        for (int o = 0; o <= max_order[i]; ++o)
          if (!adj[o].allFinite()) throw NumericalFailure("non-finite adjoint in dimension " + std::to_string(i));
        core.backward(batch, adj, grad.subspan(model.param_offset(i), core.param_count()));
      }
    }
    return values;
  }

  int dim_;
  std::vector<Region> regions_;
  std::vector<std::vector<detail::SliceKey>> keys_;                      // [dim][slice]
  std::vector<std::vector<std::vector<Eigen::VectorXd>>> weights_;      // [region][dim][slice]
  std::vector<Term> terms_;
  double constant_ = 0.0;
};

/// Single TT term integrated over `regions`.
inline double assemble_term(const FTTModel& model, const FactorSpec& spec, const std::vector<Region>& regions) {
  AssembledFunctional f(model.dim(), regions);
  f.add_term(1.0, spec, "term");
  return f.value(model);
}

// ---------------------------------------------------------------------------
// Loss builders

/// -c1 * Laplacian(u) + b(x) u = f(x), with b and f sums of separable terms.
struct EllipticOperator {
  double c1 = 1.0;
  SeparableField b;
  SeparableField f;
};

/// Integral of (L u - f)^2 expanded as I1 + ... + I5 + integral of f^2.
///
/// Labels: I1[y_j*y_k] (Delta u = sum_k y_k, y_k the chain with core k
/// differentiated twice), I2[b_p*b_q], I3[b_p*y_k], I4[f_q*y_k], I5[b_p*f_q],
/// and Cf[f_p*f_q] for the constant part.
inline AssembledFunctional residual_functional(const EllipticOperator& op, std::vector<Region> regions, int d,
                                               bool include_constant = true) {
  if (!op.b.empty() && op.b.dim() != d) throw InvalidArgument("residual_functional: b has wrong dimension");
  if (!op.f.empty() && op.f.dim() != d) throw InvalidArgument("residual_functional: f has wrong dimension");
  AssembledFunctional fn(d, std::move(regions));
  const double c1 = op.c1;
  const auto& bt = op.b.terms();
  const auto& ft = op.f.terms();
  auto tag = [](const char* g, const std::string& a, const std::string& b) {
    return std::string(g) + "[" + a + "*" + b + "]";
  };
  auto y = [](int k) { return "y" + std::to_string(k + 1); };

  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) {
      FactorSpec s;
      for (int i = 0; i < d; ++i) s.dims.push_back({Constituent::core(i == j ? 2 : 0), Constituent::core(i == k ? 2 : 0)});
      fn.add_term(c1 * c1, s, tag("I1", y(j), y(k)));
    }
  for (std::size_t p = 0; p < bt.size(); ++p)
    for (std::size_t q = 0; q < bt.size(); ++q) {
      FactorSpec s;
      for (int i = 0; i < d; ++i)
        s.dims.push_back({Constituent::field_factor(bt[p].factors[i]), Constituent::field_factor(bt[q].factors[i]),
                          Constituent::core(0), Constituent::core(0)});
      fn.add_term(bt[p].coeff * bt[q].coeff, s, tag("I2", "b" + std::to_string(p), "b" + std::to_string(q)));
    }
  for (std::size_t p = 0; p < bt.size(); ++p)
    for (int k = 0; k < d; ++k) {
      FactorSpec s;
      for (int i = 0; i < d; ++i)
        s.dims.push_back(
            {Constituent::field_factor(bt[p].factors[i]), Constituent::core(i == k ? 2 : 0), Constituent::core(0)});
      fn.add_term(-2.0 * c1 * bt[p].coeff, s, tag("I3", "b" + std::to_string(p), y(k)));
    }
  for (std::size_t q = 0; q < ft.size(); ++q)
    for (int k = 0; k < d; ++k) {
      FactorSpec s;
      for (int i = 0; i < d; ++i)
        s.dims.push_back({Constituent::core(i == k ? 2 : 0), Constituent::field_factor(ft[q].factors[i])});
      fn.add_term(2.0 * c1 * ft[q].coeff, s, tag("I4", "f" + std::to_string(q), y(k)));
    }
  for (std::size_t p = 0; p < bt.size(); ++p)
    for (std::size_t q = 0; q < ft.size(); ++q) {
      FactorSpec s;
      for (int i = 0; i < d; ++i)
        s.dims.push_back({Constituent::field_factor(bt[p].factors[i]), Constituent::field_factor(ft[q].factors[i]),
                          Constituent::core(0)});
      fn.add_term(-2.0 * bt[p].coeff * ft[q].coeff, s, tag("I5", "b" + std::to_string(p), "f" + std::to_string(q)));
    }
  if (include_constant) {
    // Integral of f^2 does not depend on the model; fold it in once.
    AssembledFunctional cf(d, fn.regions());
    for (std::size_t p = 0; p < ft.size(); ++p)
      for (std::size_t q = 0; q < ft.size(); ++q) {
        FactorSpec s;
        for (int i = 0; i < d; ++i)
          s.dims.push_back({Constituent::field_factor(ft[p].factors[i]), Constituent::field_factor(ft[q].factors[i])});
        cf.add_term(ft[p].coeff * ft[q].coeff, s, tag("Cf", "f" + std::to_string(p), "f" + std::to_string(q)));
      }
    if (cf.term_count() > 0) fn.add_constant(cf.value(FTTModel::init(uniform_ranks(d, 1), 1, 0, InitScheme::zeros)));
  }
  return fn;
}

inline double residual_loss(const FTTModel& model, const EllipticOperator& op, const std::vector<Region>& regions) {
  return residual_functional(op, regions, model.dim()).value(model);
}

/// The three integrals of the Rayleigh quotient, each as its own functional.
struct EnergyFunctionals {
  AssembledFunctional dirichlet;  // integral of grad u . grad u
  AssembledFunctional potential;  // integral of V u^2
  AssembledFunctional mass;       // integral of u^2
};

inline EnergyFunctionals energy_functionals(const SeparableField& potential, const std::vector<Region>& regions, int d) {
  if (!potential.empty() && potential.dim() != d) throw InvalidArgument("energy_functionals: V has wrong dimension");
  EnergyFunctionals e{AssembledFunctional(d, regions), AssembledFunctional(d, regions), AssembledFunctional(d, regions)};
  for (int k = 0; k < d; ++k) {
    FactorSpec s;
    for (int i = 0; i < d; ++i) {
      const int o = i == k ? 1 : 0;
      s.dims.push_back({Constituent::core(o), Constituent::core(o)});
    }
    e.dirichlet.add_term(1.0, s, "G[d" + std::to_string(k + 1) + "]");
  }
  const auto& vt = potential.terms();
  for (std::size_t p = 0; p < vt.size(); ++p) {
    FactorSpec s;
    for (int i = 0; i < d; ++i)
      s.dims.push_back({Constituent::field_factor(vt[p].factors[i]), Constituent::core(0), Constituent::core(0)});
    e.potential.add_term(vt[p].coeff, s, "V[" + std::to_string(p) + "]");
  }
  FactorSpec s;
  for (int i = 0; i < d; ++i) s.dims.push_back({Constituent::core(0), Constituent::core(0)});
  e.mass.add_term(1.0, s, "M[u*u]");
  return e;
}

struct EnergyTerms {
  double dirichlet = 0.0;
  double potential = 0.0;
  double mass = 0.0;
};

inline EnergyTerms energy_terms(const FTTModel& model, const SeparableField& potential,
                                const std::vector<Region>& regions) {
  const auto e = energy_functionals(potential, regions, model.dim());
  return {e.dirichlet.value(model), e.potential.value(model), e.mass.value(model)};
}

/// Rectangle-rule boundary mismatch: integral over boundary regions of (u - g)^2.
inline AssembledFunctional boundary_functional(const SeparableField& g, std::vector<Region> regions, int d) {
  if (!g.empty() && g.dim() != d) throw InvalidArgument("boundary_functional: g has wrong dimension");
  AssembledFunctional fn(d, std::move(regions));
  FactorSpec uu;
  for (int i = 0; i < d; ++i) uu.dims.push_back({Constituent::core(0), Constituent::core(0)});
  fn.add_term(1.0, uu, "B[u*u]");
  const auto& gt = g.terms();
  for (std::size_t p = 0; p < gt.size(); ++p) {
    FactorSpec s;
    for (int i = 0; i < d; ++i) s.dims.push_back({Constituent::field_factor(gt[p].factors[i]), Constituent::core(0)});
    fn.add_term(-2.0 * gt[p].coeff, s, "B[g" + std::to_string(p) + "*u]");
  }
  if (!gt.empty()) {
    AssembledFunctional gg(d, fn.regions());
    for (std::size_t p = 0; p < gt.size(); ++p)
      for (std::size_t q = 0; q < gt.size(); ++q) {
        FactorSpec s;
        for (int i = 0; i < d; ++i)
          s.dims.push_back({Constituent::field_factor(gt[p].factors[i]), Constituent::field_factor(gt[q].factors[i])});
        gg.add_term(gt[p].coeff * gt[q].coeff, s, "Cg");
      }
    fn.add_constant(gg.value(FTTModel::init(uniform_ranks(d, 1), 1, 0, InitScheme::zeros)));
  }
  return fn;
}

inline double boundary_loss_soft(const FTTModel& model, const BoxDomain& domain, double dx, const SeparableField& g) {
  return boundary_functional(g, boundary_regions(domain, dx), model.dim()).value(model);
}

}  // namespace fttnn
