#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fttnn/errors.hpp"
#include "fttnn/ftt_model.hpp"
#include "fttnn/gradients.hpp"

namespace fttnn {

/// Loss at x; writes the gradient into g.
using LossFn = std::function<double(std::span<const double> x, std::span<double> g)>;

class Adam {
 public:
  explicit Adam(std::size_t n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {
    if (!(lr > 0.0)) throw InvalidArgument("Adam: learning rate must be > 0");
  }

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw InvalidArgument("Adam: size mismatch");
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!std::isfinite(grad[i]))
        throw NumericalFailure("Adam: gradient entry " + std::to_string(i) + " is not finite at step " +
                               std::to_string(t_ + 1));
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long long t() const { return t_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

struct LbfgsOptions {
  double lr = 1.0;  // initial line-search trial step
  int history = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_evals = 25;
};

struct LbfgsStepInfo {
  int evals = 0;
  double step = 0.0;
  bool fallback = false;  // line search failed; gradient fallback attempted
  bool moved = true;
};

/// Limited-memory BFGS with a strong-Wolfe line search; one call is one iteration.
class Lbfgs {
 public:
  explicit Lbfgs(LbfgsOptions opt = {}) : opt_(opt) {
    if (opt.history < 1) throw InvalidArgument("Lbfgs: history must be >= 1");
    if (!(opt.lr > 0.0)) throw InvalidArgument("Lbfgs: learning rate must be > 0");
    if (!(0.0 < opt.c1 && opt.c1 < opt.c2 && opt.c2 < 1.0)) throw InvalidArgument("Lbfgs: need 0 < c1 < c2 < 1");
  }

  /// Advances x; f and g must hold the loss and gradient at x and are updated in place.
  LbfgsStepInfo step(std::vector<double>& x, double& f, std::vector<double>& g, const LossFn& fn) {
    const std::size_t n = x.size();
    if (g.size() != n) throw InvalidArgument("Lbfgs: gradient size mismatch");
    if (!std::isfinite(f)) throw NumericalFailure("Lbfgs: loss is not finite at the current point");
    LbfgsStepInfo info;
    std::vector<double> p = direction(g);
    double d0 = dot(g, p);
    if (!(d0 < 0.0)) {
      clear();
      p = g;
      for (auto& v : p) v = -v;
      d0 = -dot(g, g);
    }
    if (d0 == 0.0) {
      info.moved = false;
      return info;
    }
    const double a_init = opt_.lr * (s_.empty() ? std::min(1.0, 1.0 / l1(g)) : 1.0);

    Search ls{x, p, fn, f, d0, opt_};
    const auto found = ls.run(a_init);
    info.evals = ls.evals;
    const Trial* accept = found ? &*found : (ls.best ? &*ls.best : nullptr);
    if (accept) {
      commit(x, g, *accept, p);
      f = accept->f;
      info.step = accept->a;
      return info;
    }

    info.fallback = true;
    const double gnorm = std::sqrt(dot(g, g));
    const double len = opt_.lr * 1e-2;
    std::vector<double> xn(n), gn(n);
    for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] - len * g[i] / gnorm;
    double fnew = std::numeric_limits<double>::infinity();
    try {
      fnew = fn(xn, gn);
    } catch (const NumericalFailure&) {
    }
    ++info.evals;
    if (std::isfinite(fnew) && fnew < f) {
      x = std::move(xn);
      g = std::move(gn);
      f = fnew;
      info.step = len;
    } else {
      info.moved = false;
    }
    clear();
    return info;
  }

  void clear() {
    s_.clear();
    y_.clear();
  }
  std::size_t history_size() const { return s_.size(); }

 private:
  struct Trial {
    double a = 0.0;
    double f = 0.0;
    double d = 0.0;
    std::vector<double> g;
  };

  struct Search {
    const std::vector<double>& x;
    const std::vector<double>& p;
    const LossFn& fn;
    double f0, d0;
    LbfgsOptions opt;
    int evals = 0;
    std::optional<Trial> best;  // lowest trial satisfying sufficient decrease

    Trial eval(double a) {
      Trial t{a, std::numeric_limits<double>::infinity(), 0.0, std::vector<double>(x.size(), 0.0)};
      std::vector<double> xa(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) xa[i] = x[i] + a * p[i];
      ++evals;
      try {
        t.f = fn(xa, t.g);
      } catch (const NumericalFailure&) {
        t.f = std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(t.f)) {
        t.f = std::numeric_limits<double>::infinity();
        return t;
      }
      t.d = dot(t.g, p);
      if (armijo(t) && (!best || t.f < best->f)) best = t;
      return t;
    }

    bool armijo(const Trial& t) const { return std::isfinite(t.f) && t.f <= f0 + opt.c1 * t.a * d0; }
    bool curvature(const Trial& t) const { return std::abs(t.d) <= -opt.c2 * d0; }

    std::optional<Trial> run(double a1) {
      Trial prev{0.0, f0, d0, {}};
      double a = a1;
      for (int i = 0; evals < opt.max_evals; ++i) {
        Trial t = eval(a);
        if (!armijo(t) || (i > 0 && t.f >= prev.f)) return zoom(prev, t);
        if (curvature(t)) return t;
        if (t.d >= 0.0) return zoom(t, prev);
        prev = std::move(t);
        a *= 2.0;
      }
      return std::nullopt;
    }

    std::optional<Trial> zoom(Trial lo, Trial hi) {
      while (evals < opt.max_evals) {
        const double a = interpolate(lo, hi);
        Trial t = eval(a);
        if (!armijo(t) || t.f >= lo.f) {
          hi = std::move(t);
        } else {
          if (curvature(t)) return t;
          if (t.d * (hi.a - lo.a) >= 0.0) hi = lo;
          lo = std::move(t);
        }
        if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
      }
      return std::nullopt;
    }

    // Cubic interpolation on [lo, hi], falling back to bisection; kept away from the ends.
    static double interpolate(const Trial& lo, const Trial& hi) {
      const double a0 = lo.a, a1 = hi.a;
      const double lower = std::min(a0, a1), upper = std::max(a0, a1), w = upper - lower;
      double a = 0.5 * (a0 + a1);
      if (std::isfinite(hi.f) && std::isfinite(lo.f)) {
        const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a0 - a1);
        const double disc = d1 * d1 - lo.d * hi.d;
        if (disc >= 0.0) {
          const double d2 = std::copysign(std::sqrt(disc), a1 - a0);
          const double c = a1 - (a1 - a0) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
          if (std::isfinite(c)) a = c;
        }
      }
      return std::clamp(a, lower + 0.1 * w, upper - 0.1 * w);
    }
  };

  std::vector<double> direction(const std::vector<double>& g) const {
    std::vector<double> q = g;
    const std::size_t k = s_.size();
    std::vector<double> alpha(k), rho(k);
    for (std::size_t j = k; j-- > 0;) {
      rho[j] = 1.0 / dot(y_[j], s_[j]);
      alpha[j] = rho[j] * dot(s_[j], q);
      axpy(-alpha[j], y_[j], q);
    }
    if (k > 0) {
      const double gamma = dot(s_[k - 1], y_[k - 1]) / dot(y_[k - 1], y_[k - 1]);
      for (auto& v : q) v *= gamma;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double beta = rho[j] * dot(y_[j], q);
      axpy(alpha[j] - beta, s_[j], q);
    }
    for (auto& v : q) v = -v;
    return q;
  }

  void commit(std::vector<double>& x, std::vector<double>& g, const Trial& t, const std::vector<double>& p) {
    std::vector<double> s(x.size()), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      s[i] = t.a * p[i];
      y[i] = t.g[i] - g[i];
      x[i] += s[i];
    }
    g = t.g;
    if (dot(s, y) > 1e-10) {
      s_.push_back(std::move(s));
      y_.push_back(std::move(y));
      if (static_cast<int>(s_.size()) > opt_.history) {
        s_.pop_front();
        y_.pop_front();
      }
    }
  }

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }
  static double l1(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
  }
  static void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
  }

  LbfgsOptions opt_;
  std::deque<std::vector<double>> s_, y_;
};

struct Schedule {
  int adam_epochs = 5000;
  double adam_lr = 0.003;
  int lbfgs_epochs = 1000;
  double lbfgs_lr = 0.1;
  int log_every = 100;         // cadence of rel_error evaluation and log lines; 0 disables
  int checkpoint_every = 0;    // 0 = only at the phase switch and the end
  int lr_decay_every = 0;      // halve the Adam rate every K epochs; 0 = off
  double lr_decay = 0.5;
};

struct MetricRow {
  int epoch = 0;
  std::string phase;
  double loss = 0.0;
  std::optional<double> rel_error;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,phase,loss,rel_error,wall_ms";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricsHeader << '\n';
  const auto old = os.precision(17);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.phase << ',' << r.loss << ',';
    if (r.rel_error) os << *r.rel_error;
    os << ',' << r.wall_ms << '\n';
  }
  os.precision(old);
}

struct TrainHooks {
  std::function<double(std::span<const double> params)> rel_error;                 // optional
  std::function<void(std::span<const double> params, const std::string& tag)> checkpoint;  // optional
  std::function<void(const MetricRow&)> on_metric;  // optional, called as each row is recorded
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  double final_loss = 0.0;
  int fallbacks = 0;
};

/// Adam for E_a epochs then L-BFGS for E_l epochs, one full-batch step per epoch.
///
/// Each metrics row records the loss at the start of its epoch. On a numerical
/// failure the last finite parameters are checkpointed with tag "failure" and
/// the exception is rethrown.
inline TrainResult train(std::vector<double>& params, const LossFn& fn, const Schedule& sch,
                         const TrainHooks& hooks = {}) {
  if (sch.adam_epochs < 0 || sch.lbfgs_epochs < 0) throw InvalidArgument("train: epoch counts must be >= 0");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
  TrainResult res;
  const std::size_t n = params.size();
  std::vector<double> g(n), last_good = params;
  auto checkpoint = [&](std::span<const double> p, const std::string& tag) {
    if (hooks.checkpoint) hooks.checkpoint(p, tag);
  };
  auto record = [&](int epoch, const char* phase, double loss) {
    MetricRow row{epoch, phase, loss, std::nullopt, elapsed()};
    const bool logged = sch.log_every > 0 && (epoch % sch.log_every == 0);
    if (logged && hooks.rel_error) row.rel_error = hooks.rel_error(params);
    if (logged && hooks.log) {
      *hooks.log << phase << " epoch " << epoch << " loss " << loss;
      if (row.rel_error) *hooks.log << " rel_error " << *row.rel_error;
      *hooks.log << '\n';
    }
    if (hooks.on_metric) hooks.on_metric(row);
    res.metrics.push_back(row);
  };

  try {
    Adam adam(n, sch.adam_lr > 0.0 ? sch.adam_lr : 1e-3);
    for (int e = 0; e < sch.adam_epochs; ++e) {
      if (sch.lr_decay_every > 0 && e > 0 && e % sch.lr_decay_every == 0) adam.set_lr(adam.lr() * sch.lr_decay);
      const double f = fn(params, g);
      if (!std::isfinite(f)) throw NumericalFailure("train: loss is not finite at Adam epoch " + std::to_string(e));
      last_good = params;
      record(e, "adam", f);
      adam.step(params, g);
      if (sch.checkpoint_every > 0 && (e + 1) % sch.checkpoint_every == 0) checkpoint(params, "epoch" + std::to_string(e + 1));
    }
    if (sch.adam_epochs > 0 && sch.lbfgs_epochs > 0) checkpoint(params, "adam_end");

    if (sch.lbfgs_epochs > 0) {
      Lbfgs lbfgs(LbfgsOptions{sch.lbfgs_lr > 0.0 ? sch.lbfgs_lr : 1.0});
      double f = fn(params, g);
      if (!std::isfinite(f)) throw NumericalFailure("train: loss is not finite entering L-BFGS");
      for (int e = 0; e < sch.lbfgs_epochs; ++e) {
        const int epoch = sch.adam_epochs + e;
        last_good = params;
        record(epoch, "lbfgs", f);
        const auto info = lbfgs.step(params, f, g, fn);
        if (info.fallback) {
          ++res.fallbacks;
          if (hooks.log)
            *hooks.log << "lbfgs epoch " << epoch << ": line search failed, gradient fallback "
                       << (info.moved ? "accepted" : "rejected") << '\n';
        }
        if (sch.checkpoint_every > 0 && (epoch + 1) % sch.checkpoint_every == 0)
          checkpoint(params, "epoch" + std::to_string(epoch + 1));
      }
    }
    res.final_loss = fn(params, g);
  } catch (const NumericalFailure&) {
    params = last_good;
    checkpoint(params, "failure");
    throw;
  }
  return res;
}

/// Trains the model in place against `objective`.
inline TrainResult train(FTTModel& model, const Objective& objective, const Schedule& sch, TrainHooks hooks = {},
                         std::function<double(const FTTModel&)> rel_error = {},
                         std::function<void(const FTTModel&, const std::string&)> checkpoint = {}) {
  std::vector<double> params = model.get_params();
  FTTModel work = model;
  LossFn fn = [&](std::span<const double> x, std::span<double> g) {
    work.set_params(x);
    return objective.evaluate(work, g);
  };
  if (rel_error)
    hooks.rel_error = [&](std::span<const double> x) {
      work.set_params(x);
      return rel_error(work);
    };
  if (checkpoint)
    hooks.checkpoint = [&](std::span<const double> x, const std::string& tag) {
      FTTModel snap = model;
      snap.set_params(x);
      checkpoint(snap, tag);
    };
  try {
    auto res = train(params, fn, sch, hooks);
    model.set_params(params);
    return res;
  } catch (...) {
    model.set_params(params);
    throw;
  }
}

}  // namespace fttnn
