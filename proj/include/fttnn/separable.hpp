#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fttnn/errors.hpp"

namespace fttnn {

/// Closed-form univariate factor with derivatives up to order 2.
///
/// Kinds: constant c; sin(w x + p); cos(w x + p); exp(a x + s); polynomial sum c_k x^k.
class Factor1D {
 public:
  enum class Kind { constant, sin, cos, exp, poly };

  static Factor1D constant(double c) { return Factor1D(Kind::constant, {c}); }
  static Factor1D sin(double freq, double phase = 0.0) { return Factor1D(Kind::sin, {freq, phase}); }
  static Factor1D cos(double freq, double phase = 0.0) { return Factor1D(Kind::cos, {freq, phase}); }
  static Factor1D exp(double rate, double shift = 0.0) { return Factor1D(Kind::exp, {rate, shift}); }
  static Factor1D poly(std::vector<double> coeffs) {
    if (coeffs.empty()) coeffs.push_back(0.0);
    return Factor1D(Kind::poly, std::move(coeffs));
  }

  Kind kind() const { return kind_; }
  const std::vector<double>& params() const { return params_; }

  bool is_constant() const {
    if (kind_ == Kind::constant) return true;
    if (kind_ == Kind::poly) {
      for (std::size_t k = 1; k < params_.size(); ++k)
        if (params_[k] != 0.0) return false;
      return true;
    }
    return false;
  }
  double constant_value() const { return params_[0]; }

  double operator()(double x, int order = 0) const {
    if (order < 0 || order > 2) throw InvalidArgument("Factor1D: derivative order must be 0, 1 or 2");
    switch (kind_) {
      case Kind::constant:
        return order == 0 ? params_[0] : 0.0;
      case Kind::sin: {
        const double w = params_[0];
        const double z = w * x + params_[1];
        if (order == 0) return std::sin(z);
        if (order == 1) return w * std::cos(z);
        return -w * w * std::sin(z);
      }
      case Kind::cos: {
        const double w = params_[0];
        const double z = w * x + params_[1];
        if (order == 0) return std::cos(z);
        if (order == 1) return -w * std::sin(z);
        return -w * w * std::cos(z);
      }
      case Kind::exp: {
        const double a = params_[0];
        const double e = std::exp(a * x + params_[1]);
        return order == 0 ? e : (order == 1 ? a * e : a * a * e);
      }
      case Kind::poly: {
        double acc = 0.0;
        for (std::size_t k = params_.size(); k-- > static_cast<std::size_t>(order);) {
          double c = params_[k];
          for (int j = 0; j < order; ++j) c *= static_cast<double>(k - j);
          acc = acc * x + c;
        }
        return acc;
      }
    }
    return 0.0;
  }

  std::string to_string() const {
    auto num = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    std::string out;
    switch (kind_) {
      case Kind::constant: out = "const("; break;
      case Kind::sin: out = "sin("; break;
      case Kind::cos: out = "cos("; break;
      case Kind::exp: out = "exp("; break;
      case Kind::poly: out = "poly("; break;
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (k) out += ",";
      out += num(params_[k]);
    }
    return out + ")";
  }

  /// Parses "const(c)", "sin(w[,p])", "cos(w[,p])", "exp(a[,s])", "poly(c0,c1,...)".
  /// Numbers accept a "pi" multiplier: "2pi", "2*pi", "-pi/2", "0.5*pi/3".
  static Factor1D parse(std::string_view text) {
    std::string s;
    for (char c : text)
      if (c != ' ' && c != '\t') s += c;
    const auto open = s.find('(');
    if (open == std::string::npos || s.back() != ')') throw InvalidArgument("factor '" + std::string(text) + "': expected name(args)");
    const std::string name = s.substr(0, open);
    std::vector<double> args;
    std::string body = s.substr(open + 1, s.size() - open - 2);
    std::size_t pos = 0;
    while (pos <= body.size() && !body.empty()) {
      const auto comma = body.find(',', pos);
      args.push_back(parse_number(body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi)
        throw InvalidArgument("factor '" + std::string(text) + "': wrong number of arguments");
    };
    if (name == "const") {
      need(1, 1);
      return constant(args[0]);
    }
    if (name == "sin" || name == "cos" || name == "exp") {
      need(1, 2);
      const double second = args.size() > 1 ? args[1] : 0.0;
      if (name == "sin") return sin(args[0], second);
      if (name == "cos") return cos(args[0], second);
      return exp(args[0], second);
    }
    if (name == "poly") {
      need(1, 64);
      return poly(args);
    }
    throw InvalidArgument("factor '" + std::string(text) + "': unknown function '" + name +
                          "' (allowed: const, sin, cos, exp, poly)");
  }

  bool operator==(const Factor1D&) const = default;

 private:
  Factor1D(Kind k, std::vector<double> p) : kind_(k), params_(std::move(p)) {}

  static double parse_number(const std::string& tok) {
    if (tok.empty()) throw InvalidArgument("factor: empty numeric argument");
    std::string t = tok;
    double divisor = 1.0;
    if (const auto slash = t.find('/'); slash != std::string::npos) {
      divisor = parse_number(t.substr(slash + 1));
      t = t.substr(0, slash);
    }
    double value = 1.0;
    const auto pi_pos = t.find("pi");
    if (pi_pos != std::string::npos) {
      if (pi_pos + 2 != t.size()) throw InvalidArgument("factor: bad number '" + tok + "'");
      std::string lead = t.substr(0, pi_pos);
      if (!lead.empty() && lead.back() == '*') lead.pop_back();
      if (lead.empty() || lead == "+") value = 1.0;
      else if (lead == "-") value = -1.0;
      else value = strict_double(lead, tok);
      value *= std::numbers::pi;
    } else {
      value = strict_double(t, tok);
    }
    return value / divisor;
  }

  static double strict_double(const std::string& s, const std::string& tok) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw InvalidArgument("factor: bad number '" + tok + "'");
    return v;
  }

  Kind kind_;
  std::vector<double> params_;
};

/// coeff * prod_i factors[i](x_i)
struct SeparableTerm {
  double coeff = 1.0;
  std::vector<Factor1D> factors;
};

/// Sum of rank-1 separable terms; covers sources, reaction coefficients and potentials.
class SeparableField {
 public:
  SeparableField() = default;
  explicit SeparableField(int dim) : dim_(dim) {}
  SeparableField(int dim, std::vector<SeparableTerm> terms) : dim_(dim) {
    for (auto& t : terms) add(std::move(t));
  }

  static SeparableField constant(int dim, double c) {
    SeparableField f(dim);
    f.add({c, std::vector<Factor1D>(dim, Factor1D::constant(1.0))});
    return f;
  }

  void add(SeparableTerm term) {
    if (static_cast<int>(term.factors.size()) != dim_)
      throw InvalidArgument("SeparableField: term has " + std::to_string(term.factors.size()) +
                            " factors, expected " + std::to_string(dim_));
    terms_.push_back(std::move(term));
  }

  int dim() const { return dim_; }
  bool empty() const { return terms_.empty(); }
  const std::vector<SeparableTerm>& terms() const { return terms_; }

  double operator()(std::span<const double> x) const { return derivative(x, -1, 0); }

  /// d^order/dx_axis^order of the field; axis < 0 means plain value.
  double derivative(std::span<const double> x, int axis, int order) const {
    check_point(x);
    double sum = 0.0;
    for (const auto& t : terms_) {
      double p = t.coeff;
      for (int i = 0; i < dim_; ++i) p *= t.factors[i](x[i], i == axis ? order : 0);
      sum += p;
    }
    return sum;
  }

  double laplacian(std::span<const double> x) const {
    double sum = 0.0;
    for (int k = 0; k < dim_; ++k) sum += derivative(x, k, 2);
    return sum;
  }

  SeparableField scaled(double s) const {
    SeparableField out = *this;
    for (auto& t : out.terms_) t.coeff *= s;
    return out;
  }

 private:
  void check_point(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim_)
      throw InvalidArgument("SeparableField: point has dimension " + std::to_string(x.size()) + ", expected " +
                            std::to_string(dim_));
  }

  int dim_ = 0;
  std::vector<SeparableTerm> terms_;
};

}  // namespace fttnn
