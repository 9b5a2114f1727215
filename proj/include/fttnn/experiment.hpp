#pragma once

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fttnn/baselines.hpp"
#include "fttnn/checkpoint.hpp"
#include "fttnn/errors.hpp"
#include "fttnn/optim.hpp"
#include "fttnn/problems.hpp"

#ifndef FTTNN_GIT_DESCRIBE
#define FTTNN_GIT_DESCRIBE "unknown"
#endif

namespace fttnn {

using json = nlohmann::json;

inline constexpr int kSummarySchemaVersion = 1;

enum class Method { fttnn, pinn, drm, tt_als };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::fttnn: return "fttnn";
    case Method::pinn: return "pinn";
    case Method::drm: return "drm";
    default: return "tt-als";
  }
}

/// Discrete completion settings: `grid` points per dimension, `fraction` observed.
struct AlsSettings {
  int grid = 30;
  double fraction = 0.15;
  int sweeps = 30;
  double ridge = 1e-10;
};

struct ExperimentConfig {
  Method method = Method::fttnn;
  ProblemSpec problem;
  std::uint64_t seed = 0;
  std::string output_dir;
  EvalSpec eval;
  std::string init_checkpoint;
  AlsSettings als;
  json source;  // the document as given
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const std::string& key) const { return j_.at(key); }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : j_.items())
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
        throw ConfigError(at(k), "unknown key");
  }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    if (!raw(key).is_number()) throw ConfigError(at(key), "expected a number");
    return raw(key).get<double>();
  }

  long long integer(const std::string& key, long long def) const {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(at(key), "expected an integer");
    return v.get<long long>();
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!raw(key).is_boolean()) throw ConfigError(at(key), "expected true or false");
    return raw(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!raw(key).is_string()) throw ConfigError(at(key), "expected a string");
    return raw(key).get<std::string>();
  }

  Reader child(const std::string& key) const { return Reader(raw(key), at(key)); }

 private:
  const json& j_;
  std::string path_;
};

inline int positive(long long v, const std::string& path) {
  if (v < 1 || v > 1000000000) throw ConfigError(path, "must be a positive integer, got " + std::to_string(v));
  return static_cast<int>(v);
}

inline int non_negative(long long v, const std::string& path) {
  if (v < 0 || v > 1000000000) throw ConfigError(path, "must be >= 0, got " + std::to_string(v));
  return static_cast<int>(v);
}

/// [{"coeff": c, "factors": ["sin(pi)", ...]}, ...]
inline SeparableField parse_field(const json& j, int d, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected a list of terms");
  SeparableField f(d);
  for (std::size_t t = 0; t < j.size(); ++t) {
    const std::string tp = path + "[" + std::to_string(t) + "]";
    const Reader r(j[t], tp);
    r.allow({"coeff", "factors"});
    const double c = r.number("coeff", 1.0);
    if (!r.has("factors") || !r.raw("factors").is_array()) throw ConfigError(r.at("factors"), "expected a list of factor strings");
    const auto& fs = r.raw("factors");
    if (static_cast<int>(fs.size()) != d)
      throw ConfigError(r.at("factors"), "expected " + std::to_string(d) + " factors, got " + std::to_string(fs.size()));
    std::vector<Factor1D> factors;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const std::string fp = r.at("factors") + "[" + std::to_string(i) + "]";
      if (!fs[i].is_string()) throw ConfigError(fp, "expected a factor string such as \"sin(2pi)\"");
      try {
        factors.push_back(Factor1D::parse(fs[i].get<std::string>()));
      } catch (const InvalidArgument& e) {
        throw ConfigError(fp, e.what());
      }
    }
    f.add({c, std::move(factors)});
  }
  return f;
}

inline std::vector<std::vector<QuadratureSpec>> parse_quadrature(const json& j, const BoxDomain& domain,
                                                                 const std::string& path) {
  const int d = domain.dim();
  const std::size_t boxes = domain.boxes().size();
  auto one = [&](const json& q, const std::string& p) {
    const Reader r(q, p);
    r.allow({"n_sub", "n_pts"});
    QuadratureSpec s;
    s.n_sub = positive(r.integer("n_sub", 1), r.at("n_sub"));
    s.n_pts = positive(r.integer("n_pts", 1), r.at("n_pts"));
    if (s.n_pts > 200) throw ConfigError(r.at("n_pts"), "at most 200 Gauss points per subinterval");
    return s;
  };
  if (j.is_object()) {
    const auto q = one(j, path);
    return std::vector<std::vector<QuadratureSpec>>(boxes, std::vector<QuadratureSpec>(d, q));
  }
  if (!j.is_array() || j.size() != boxes)
    throw ConfigError(path, "expected {n_sub, n_pts} or one list of " + std::to_string(d) + " per box (" +
                                std::to_string(boxes) + " boxes)");
  std::vector<std::vector<QuadratureSpec>> out;
  for (std::size_t b = 0; b < boxes; ++b) {
    const std::string bp = path + "[" + std::to_string(b) + "]";
    if (!j[b].is_array() || static_cast<int>(j[b].size()) != d)
      throw ConfigError(bp, "expected " + std::to_string(d) + " quadrature entries");
    out.emplace_back();
    for (int i = 0; i < d; ++i) out.back().push_back(one(j[b][i], bp + "[" + std::to_string(i) + "]"));
  }
  return out;
}

inline ProblemSpec parse_inline_problem(const Reader& r) {
  r.allow({"name", "kind", "domain", "c1", "b", "f", "V", "exact", "exact_lambda", "boundary", "rank", "hidden",
           "quadrature", "samples"});
  ProblemSpec s;
  s.name = r.string("name", "custom");
  const auto kind = r.string("kind", "elliptic");
  if (kind == "elliptic") s.kind = ProblemKind::elliptic;
  else if (kind == "eigenvalue") s.kind = ProblemKind::eigenvalue;
  else if (kind == "supervised") s.kind = ProblemKind::supervised;
  else throw ConfigError(r.at("kind"), "expected elliptic, eigenvalue or supervised");

  if (!r.has("domain") || !r.raw("domain").is_array() || r.raw("domain").empty())
    throw ConfigError(r.at("domain"), "expected a non-empty list of boxes, each a list of [a, b] intervals");
  std::vector<Box> boxes;
  const auto& dj = r.raw("domain");
  for (std::size_t b = 0; b < dj.size(); ++b) {
    const std::string bp = r.at("domain") + "[" + std::to_string(b) + "]";
    if (!dj[b].is_array() || dj[b].empty()) throw ConfigError(bp, "expected a list of [a, b] intervals");
    Box box;
    for (std::size_t i = 0; i < dj[b].size(); ++i) {
      const auto& iv = dj[b][i];
      if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
        throw ConfigError(bp + "[" + std::to_string(i) + "]", "expected [a, b]");
      box.push_back({iv[0].get<double>(), iv[1].get<double>()});
    }
    boxes.push_back(std::move(box));
  }
  try {
    s.domain = BoxDomain(std::move(boxes));
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.at("domain"), e.what());
  }
  const int d = s.dim();
  s.c1 = r.number("c1", 1.0);
  s.b = r.has("b") ? parse_field(r.raw("b"), d, r.at("b")) : SeparableField(d);
  s.f = r.has("f") ? parse_field(r.raw("f"), d, r.at("f")) : SeparableField(d);
  s.V = r.has("V") ? parse_field(r.raw("V"), d, r.at("V")) : SeparableField(d);
  if (r.has("exact")) {
    auto u = parse_field(r.raw("exact"), d, r.at("exact"));
    s.exact_value = [u](std::span<const double> x) { return u(x); };
    s.exact = std::move(u);
  }
  if (r.has("exact_lambda")) s.exact_lambda = r.number("exact_lambda", 0.0);
  if (s.kind == ProblemKind::supervised) {
    if (!s.has_exact()) throw ConfigError(r.at("exact"), "a supervised problem needs the target function");
    s.n_samples = static_cast<std::size_t>(positive(r.integer("samples", 100000), r.at("samples")));
  }
  if (r.has("boundary")) {
    const auto b = r.child("boundary");
    b.allow({"hard", "beta", "dx", "g"});
    s.boundary.hard = b.boolean("hard", true);
    s.boundary.beta = b.number("beta", 100.0);
    s.boundary.dx = b.number("dx", 0.1);
    if (!(s.boundary.dx > 0)) throw ConfigError(b.at("dx"), "must be positive");
    if (s.boundary.beta < 0) throw ConfigError(b.at("beta"), "must be >= 0");
    s.boundary.g = b.has("g") ? parse_field(b.raw("g"), d, b.at("g")) : SeparableField(d);
  }
  if (s.boundary.hard && s.domain.boxes().size() != 1 && s.kind != ProblemKind::supervised)
    throw ConfigError(r.at("boundary.hard"), "hard boundary factors need a single box; use a soft boundary");
  s.rank = positive(r.integer("rank", 2), r.at("rank"));
  s.hidden = positive(r.integer("hidden", 30), r.at("hidden"));
  s.quadrature = std::vector<std::vector<QuadratureSpec>>(s.domain.boxes().size(),
                                                          std::vector<QuadratureSpec>(d, QuadratureSpec{20, 20}));
  if (r.has("quadrature")) s.quadrature = parse_quadrature(r.raw("quadrature"), s.domain, r.at("quadrature"));
  return s;
}

}  // namespace detail

/// Builds a configuration from a JSON document. Errors name the offending field.
inline ExperimentConfig parse_config(const json& doc) {
  using detail::Reader;
  const Reader r(doc, "");
  r.allow({"problem", "method", "seed", "output_dir", "model", "quadrature", "schedule", "eval", "baseline", "als",
           "init_checkpoint"});
  ExperimentConfig c;
  c.source = doc;

  if (!r.has("problem")) throw ConfigError("problem", "required (a builtin name or an inline definition)");
  if (r.raw("problem").is_string()) {
    try {
      c.problem = builtin(r.raw("problem").get<std::string>());
    } catch (const UnsupportedProblem& e) {
      throw ConfigError("problem", std::string(e.what()) + "; see list-problems");
    }
  } else {
    c.problem = detail::parse_inline_problem(r.child("problem"));
  }
  ProblemSpec& s = c.problem;
  const int d = s.dim();

  const auto method = r.string("method", "fttnn");
  if (method == "fttnn") c.method = Method::fttnn;
  else if (method == "pinn") c.method = Method::pinn;
  else if (method == "drm") c.method = Method::drm;
  else if (method == "tt-als") c.method = Method::tt_als;
  else throw ConfigError("method", "expected fttnn, pinn, drm or tt-als, got '" + method + "'");
  if (c.method == Method::pinn && s.kind != ProblemKind::elliptic)
    throw ConfigError("method", "pinn needs an elliptic problem");
  if (c.method == Method::drm && s.kind != ProblemKind::eigenvalue)
    throw ConfigError("method", "drm needs an eigenvalue problem");
  if (c.method == Method::tt_als && s.kind != ProblemKind::supervised)
    throw ConfigError("method", "tt-als needs a supervised problem");

  const auto seed = r.integer("seed", 0);
  if (seed < 0) throw ConfigError("seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.output_dir = r.string("output_dir", "runs/" + s.name);
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  c.init_checkpoint = r.string("init_checkpoint", "");
  if (!c.init_checkpoint.empty() && c.method != Method::fttnn)
    throw ConfigError("init_checkpoint", "only FTTNN runs can start from a checkpoint");

  if (r.has("model")) {
    const auto m = r.child("model");
    m.allow({"ranks", "hidden"});
    if (m.has("ranks")) {
      const auto& rj = m.raw("ranks");
      if (rj.is_number_integer()) {
        s.rank = detail::positive(rj.get<long long>(), m.at("ranks"));
        s.ranks.clear();
      } else if (rj.is_array()) {
        std::vector<int> ranks;
        for (const auto& v : rj) {
          if (!v.is_number_integer()) throw ConfigError(m.at("ranks"), "expected integers");
          ranks.push_back(detail::positive(v.get<long long>(), m.at("ranks")));
        }
        if (static_cast<int>(ranks.size()) != d + 1 || ranks.front() != 1 || ranks.back() != 1)
          throw ConfigError(m.at("ranks"), "expected " + std::to_string(d + 1) + " ranks starting and ending with 1");
        s.ranks = std::move(ranks);
      } else {
        throw ConfigError(m.at("ranks"), "expected an integer or a list of d + 1 integers");
      }
    }
    if (m.has("hidden")) s.hidden = detail::positive(m.integer("hidden", 1), m.at("hidden"));
  }
  if (r.has("quadrature")) s.quadrature = detail::parse_quadrature(r.raw("quadrature"), s.domain, "quadrature");

  if (r.has("schedule")) {
    const auto sc = r.child("schedule");
    sc.allow({"adam_epochs", "adam_lr", "lbfgs_epochs", "lbfgs_lr", "log_every", "checkpoint_every",
              "lr_decay_every", "lr_decay"});
    auto& sch = s.schedule;
    sch.adam_epochs = detail::non_negative(sc.integer("adam_epochs", sch.adam_epochs), sc.at("adam_epochs"));
    sch.lbfgs_epochs = detail::non_negative(sc.integer("lbfgs_epochs", sch.lbfgs_epochs), sc.at("lbfgs_epochs"));
    sch.adam_lr = sc.number("adam_lr", sch.adam_lr);
    sch.lbfgs_lr = sc.number("lbfgs_lr", sch.lbfgs_lr);
    if (!(sch.adam_lr > 0)) throw ConfigError(sc.at("adam_lr"), "must be positive");
    if (!(sch.lbfgs_lr > 0)) throw ConfigError(sc.at("lbfgs_lr"), "must be positive");
    sch.log_every = detail::non_negative(sc.integer("log_every", sch.log_every), sc.at("log_every"));
    sch.checkpoint_every = detail::non_negative(sc.integer("checkpoint_every", sch.checkpoint_every), sc.at("checkpoint_every"));
    sch.lr_decay_every = detail::non_negative(sc.integer("lr_decay_every", sch.lr_decay_every), sc.at("lr_decay_every"));
    sch.lr_decay = sc.number("lr_decay", sch.lr_decay);
    if (!(sch.lr_decay > 0 && sch.lr_decay <= 1)) throw ConfigError(sc.at("lr_decay"), "must be in (0, 1]");
  }

  c.eval = default_eval(d);
  if (r.has("eval")) {
    const auto e = r.child("eval");
    e.allow({"method", "resolution", "samples", "seed"});
    const auto m = e.string("method", c.eval.method == EvalSpec::Method::tensor_grid ? "tensor-grid" : "random-uniform");
    if (m == "tensor-grid") c.eval.method = EvalSpec::Method::tensor_grid;
    else if (m == "random-uniform") c.eval.method = EvalSpec::Method::random_uniform;
    else throw ConfigError(e.at("method"), "expected tensor-grid or random-uniform");
    c.eval.resolution = detail::positive(e.integer("resolution", c.eval.resolution), e.at("resolution"));
    if (c.eval.resolution < 2) throw ConfigError(e.at("resolution"), "must be >= 2");
    c.eval.samples = static_cast<std::size_t>(detail::positive(e.integer("samples", static_cast<long long>(c.eval.samples)), e.at("samples")));
    const auto es = e.integer("seed", 0);
    if (es < 0) throw ConfigError(e.at("seed"), "must be >= 0");
    c.eval.seed = static_cast<std::uint64_t>(es);
    if (c.eval.method == EvalSpec::Method::tensor_grid && std::pow(c.eval.resolution, d) > 1e8)
      throw ConfigError(e.at("resolution"), "tensor grid exceeds 1e8 points; use random-uniform");
  }

  if (r.has("baseline")) {
    const auto b = r.child("baseline");
    b.allow({"hidden", "samples"});
    s.baseline.hidden = detail::positive(b.integer("hidden", s.baseline.hidden), b.at("hidden"));
    s.baseline.samples = static_cast<std::size_t>(
        detail::positive(b.integer("samples", static_cast<long long>(s.baseline.samples)), b.at("samples")));
  }
  if ((c.method == Method::pinn || c.method == Method::drm) && s.baseline.samples == 0)
    throw ConfigError("baseline.samples", "required for Monte-Carlo baselines");

  if (r.has("als")) {
    const auto a = r.child("als");
    a.allow({"grid", "fraction", "sweeps", "ridge"});
    c.als.grid = detail::positive(a.integer("grid", c.als.grid), a.at("grid"));
    c.als.fraction = a.number("fraction", c.als.fraction);
    if (!(c.als.fraction > 0 && c.als.fraction <= 1)) throw ConfigError(a.at("fraction"), "must be in (0, 1]");
    c.als.sweeps = detail::non_negative(a.integer("sweeps", c.als.sweeps), a.at("sweeps"));
    c.als.ridge = a.number("ridge", c.als.ridge);
    if (c.als.ridge < 0) throw ConfigError(a.at("ridge"), "must be >= 0");
    if (std::pow(c.als.grid, d) > 1e8) throw ConfigError(a.at("grid"), "grid exceeds 1e8 points");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON in '") + path + "': " + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Reporting helpers

inline json resolved_json(const ExperimentConfig& c) {
  const auto& s = c.problem;
  json q = json::array();
  for (const auto& box : s.quadrature) {
    json b = json::array();
    for (const auto& qs : box) b.push_back({{"n_sub", qs.n_sub}, {"n_pts", qs.n_pts}});
    q.push_back(b);
  }
  const auto& sch = s.schedule;
  json out = {{"problem", s.name},
              {"kind", kind_name(s.kind)},
              {"dim", s.dim()},
              {"method", method_name(c.method)},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"schedule",
               {{"adam_epochs", sch.adam_epochs},
                {"adam_lr", sch.adam_lr},
                {"lbfgs_epochs", sch.lbfgs_epochs},
                {"lbfgs_lr", sch.lbfgs_lr},
                {"log_every", sch.log_every},
                {"checkpoint_every", sch.checkpoint_every},
                {"lr_decay_every", sch.lr_decay_every},
                {"lr_decay", sch.lr_decay}}}};
  switch (c.method) {
    case Method::fttnn:
      out["model"] = {{"ranks", model_ranks(s)}, {"hidden", s.hidden}};
      if (s.kind != ProblemKind::supervised) out["quadrature"] = q;
      if (!c.init_checkpoint.empty()) out["init_checkpoint"] = c.init_checkpoint;
      break;
    case Method::pinn:
    case Method::drm: out["baseline"] = {{"hidden", s.baseline.hidden}, {"samples", s.baseline.samples}}; break;
    case Method::tt_als:
      out["als"] = {{"grid", c.als.grid}, {"fraction", c.als.fraction}, {"sweeps", c.als.sweeps}, {"ridge", c.als.ridge}};
      out["model"] = {{"ranks", model_ranks(s)}};
      break;
  }
  if (s.kind == ProblemKind::supervised && c.method == Method::fttnn) out["samples"] = s.n_samples;
  if (s.has_exact())
    out["eval"] = {{"method", c.eval.method == EvalSpec::Method::tensor_grid ? "tensor-grid" : "random-uniform"},
                   {"resolution", c.eval.resolution},
                   {"samples", c.eval.samples},
                   {"seed", c.eval.seed}};
  return out;
}

namespace detail {

inline void check_output_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path p = fs::absolute(dir);
  while (!p.empty() && !fs::exists(p)) p = p.parent_path();
  if (p.empty() || !fs::is_directory(p)) throw ConfigError("output_dir", "'" + dir + "' is not under a directory");
  if (::access(p.c_str(), W_OK) != 0) throw ConfigError("output_dir", "'" + p.string() + "' is not writable");
}

}  // namespace detail

/// Dry-run: resolves the configuration and describes what would run.
inline std::string validate(const ExperimentConfig& c) {
  detail::check_output_dir(c.output_dir);
  const auto& s = c.problem;
  std::ostringstream os;
  os << "problem: " << describe(s) << '\n' << "method: " << method_name(c.method) << '\n';
  if (c.method == Method::fttnn) {
    const auto ranks = model_ranks(s);
    os << "ranks:";
    for (int r : ranks) os << ' ' << r;
    os << "\nhidden: " << s.hidden << '\n';
    os << "parameters: " << FTTModel::init(ranks, s.hidden, 0, InitScheme::zeros).param_count() << '\n';
    if (s.kind != ProblemKind::supervised) {
      os << "quadrature:\n";
      for (std::size_t b = 0; b < s.quadrature.size(); ++b) {
        os << "  box " << b << ":";
        for (const auto& q : s.quadrature[b]) os << ' ' << q.n_sub << " subintervals x " << q.n_pts << " points;";
        os << '\n';
      }
    } else {
      os << "samples: " << s.n_samples << '\n';
    }
    if (!c.init_checkpoint.empty()) {
      const auto m = load_checkpoint(c.init_checkpoint);
      if (!m.same_shape(make_model(s, 0)))
        throw ConfigError("init_checkpoint", "'" + c.init_checkpoint + "' does not match the configured model shape");
      os << "init_checkpoint: " << c.init_checkpoint << '\n';
    }
  } else if (c.method == Method::tt_als) {
    os << "grid: " << c.als.grid << "^" << s.dim() << ", observed " << c.als.fraction << ", sweeps " << c.als.sweeps
       << '\n';
  } else {
    os << "hidden: " << s.baseline.hidden << "\nsamples: " << s.baseline.samples << '\n';
  }
  if (c.method != Method::tt_als) {
    const auto& sch = s.schedule;
    os << "schedule: adam " << sch.adam_epochs << " @ " << sch.adam_lr << ", lbfgs " << sch.lbfgs_epochs << " @ "
       << sch.lbfgs_lr << '\n';
  }
  os << "seed: " << c.seed << "\noutput_dir: " << c.output_dir << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Running

struct RunResult {
  json summary;
  bool ok = true;
};

namespace detail {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) throw ResourceError("cannot write '" + path + "'");
    out_ << kMetricsHeader << '\n' << std::setprecision(17);
  }
  void operator()(const MetricRow& r) {
    out_ << r.epoch << ',' << r.phase << ',' << r.loss << ',';
    if (r.rel_error) out_ << *r.rel_error;
    out_ << ',' << r.wall_ms << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot write '" + path + "'");
  out << std::setw(2) << j << '\n';
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = n == 1 ? a : a + (b - a) * k / (n - 1);
  return v;
}

}  // namespace detail

/// Trains per the configuration, writing metrics.csv, checkpoint files and
/// summary.json under output_dir. A numerical failure writes the partial
/// artifacts and a summary with status "numerical_failure", then rethrows.
inline RunResult run(const ExperimentConfig& c, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  detail::check_output_dir(c.output_dir);
  fs::create_directories(c.output_dir);
  const fs::path dir(c.output_dir);
  const auto& s = c.problem;

  json summary = {{"schema_version", kSummarySchemaVersion},
                  {"status", "ok"},
                  {"problem", s.name},
                  {"method", method_name(c.method)},
                  {"seed", c.seed},
                  {"final_loss", nullptr},
                  {"rel_error", nullptr},
                  {"lambda", nullptr},
                  {"wall_time_s", nullptr},
                  {"git_describe", FTTNN_GIT_DESCRIBE},
                  {"config", {{"input", c.source}, {"resolved", resolved_json(c)}}}};
  if (s.exact_lambda) summary["lambda_exact"] = *s.exact_lambda;
  json artifacts = {{"metrics", (dir / "metrics.csv").string()}};
  detail::MetricsWriter metrics((dir / "metrics.csv").string());
  std::optional<ErrorEvaluator> err;
  if (s.has_exact()) err.emplace(s, c.eval);

  TrainHooks hooks;
  hooks.log = log;
  hooks.on_metric = [&](const MetricRow& r) { metrics(r); };
  auto finish = [&](bool ok, const std::string& error) {
    summary["wall_time_s"] = std::chrono::duration<double>(clock::now() - t0).count();
    if (!ok) {
      summary["status"] = "numerical_failure";
      summary["error"] = error;
    }
    summary["artifacts"] = artifacts;
    detail::write_json((dir / "summary.json").string(), summary);
    return RunResult{summary, ok};
  };
  auto set_lambda = [&](double q) {
    summary["lambda"] = q;
    if (s.exact_lambda) summary["lambda_error"] = std::abs(q - *s.exact_lambda);
  };

  try {
    switch (c.method) {
      case Method::fttnn: {
        FTTModel model = make_model(s, c.seed);
        if (!c.init_checkpoint.empty()) {
          auto init = load_checkpoint(c.init_checkpoint);
          if (!init.same_shape(model))
            throw ConfigError("init_checkpoint", "'" + c.init_checkpoint + "' does not match the configured model shape");
          model = std::move(init);
        }
        summary["parameter_count"] = model.param_count();
        auto save = [&](const FTTModel& m, const std::string& tag) {
          const auto path = (dir / ("checkpoint_" + tag + ".bin")).string();
          save_checkpoint(path, m);
          artifacts["checkpoint_" + tag] = path;
        };
        std::function<double(const FTTModel&)> rel;
        if (err) rel = [&](const FTTModel& m) { return (*err)(m); };
        try {
          const auto obj = make_objective(s, c.seed);
          const auto res = train(model, *obj, s.schedule, hooks, rel, save);
          summary["final_loss"] = res.final_loss;
          summary["lbfgs_fallbacks"] = res.fallbacks;
        } catch (const NumericalFailure&) {
          save(model, "final");
          throw;
        }
        const auto final_path = (dir / "checkpoint.bin").string();
        save_checkpoint(final_path, model);
        artifacts["checkpoint"] = final_path;
        if (err) summary["rel_error"] = (*err)(model);
        if (s.kind == ProblemKind::eigenvalue) set_lambda(rayleigh(model, s));
        break;
      }
      case Method::pinn:
      case Method::drm: {
        MCNet net = make_mc_net(s, c.seed);
        summary["parameter_count"] = net.param_count();
        std::optional<McResidualObjective> pinn;
        std::optional<McRayleighObjective> drm;
        if (c.method == Method::pinn) pinn.emplace(s, s.baseline.samples, derive_seed(c.seed, "samples"));
        else drm.emplace(s, s.baseline.samples, derive_seed(c.seed, "samples"));
        MCNet work = net;
        LossFn fn = [&](std::span<const double> p, std::span<double> g) {
          work.set_params(p);
          return pinn ? pinn->evaluate(work, g) : drm->evaluate(work, g);
        };
        if (err)
          hooks.rel_error = [&](std::span<const double> p) {
            work.set_params(p);
            return (*err)([&](std::span<const double> x) { return work(x); });
          };
        std::vector<double> params(net.params().begin(), net.params().end());
        const auto res = train(params, fn, s.schedule, hooks);
        summary["final_loss"] = res.final_loss;
        summary["lbfgs_fallbacks"] = res.fallbacks;
        net.set_params(params);
        if (err) summary["rel_error"] = (*err)([&](std::span<const double> x) { return net(x); });
        if (drm) set_lambda(drm->evaluate(net, {}));
        break;
      }
      case Method::tt_als: {
        const int d = s.dim();
        const Box bb = s.domain.bounding_box();
        std::vector<std::vector<double>> axes;
        for (const auto& iv : bb) axes.push_back(detail::linspace(iv.a, iv.b, c.als.grid));
        const auto total = static_cast<std::size_t>(std::llround(std::pow(c.als.grid, d)));
        std::vector<std::size_t> order(total);
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = make_rng(c.seed, "als-sample");
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_obs = static_cast<std::size_t>(std::llround(c.als.fraction * static_cast<double>(total)));
        if (n_obs < 1) throw ConfigError("als.fraction", "selects no grid points");
        auto index_of = [&](std::size_t flat, std::span<int> idx, std::span<double> x) {
          for (int i = d - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(flat % c.als.grid);
            x[i] = axes[i][idx[i]];
            flat /= c.als.grid;
          }
        };
        std::vector<int> indices(n_obs * d), idx(d);
        std::vector<double> values(n_obs), x(d);
        for (std::size_t p = 0; p < n_obs; ++p) {
          index_of(order[p], std::span<int>(indices).subspan(p * d, d), x);
          values[p] = s.exact_value(x);
        }
        const auto res = tt_als_complete(indices, values, std::vector<int>(d, c.als.grid), model_ranks(s),
                                         {.sweeps = c.als.sweeps, .ridge = c.als.ridge, .seed = c.seed});
        for (const auto& w : res.warnings)
          if (log) *log << "warning: " << w << '\n';
        double num = 0.0, den = 0.0;
        for (std::size_t p = n_obs; p < total; ++p) {
          index_of(order[p], idx, x);
          const double e = tt_entry(res.tensor, idx) - s.exact_value(x);
          num += e * e;
          den += std::pow(s.exact_value(x), 2);
        }
        const double rel = total > n_obs && den > 0 ? std::sqrt(num / den) : 0.0;
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        for (std::size_t k = 0; k < res.rmse.size(); ++k) {
          MetricRow row{static_cast<int>(k), "als", res.rmse[k] * res.rmse[k], std::nullopt, ms};
          if (k + 1 == res.rmse.size()) row.rel_error = rel;
          metrics(row);
        }
        std::size_t params = 0;
        for (const auto& core : res.tensor.cores) params += core.size();
        summary["parameter_count"] = params;
        summary["final_loss"] = res.rmse.back() * res.rmse.back();
        summary["rel_error"] = rel;
        summary["observed"] = n_obs;
        summary["warnings"] = res.warnings.size();
        break;
      }
    }
  } catch (const NumericalFailure& e) {
    finish(false, e.what());
    throw;
  }
  if (log) {
    *log << s.name << " [" << method_name(c.method) << "] final loss " << summary["final_loss"];
    if (!summary["rel_error"].is_null()) *log << " rel_error " << summary["rel_error"];
    if (!summary["lambda"].is_null()) *log << " lambda " << summary["lambda"];
    *log << '\n';
  }
  return finish(true, "");
}

// ---------------------------------------------------------------------------
// Inspection

struct SliceSpec {
  std::vector<double> fixed;  // one value per dimension; entries at the free dimensions are ignored
  int free_a = 0, free_b = 1;
  int resolution = 101;
};

/// CSV over a resolution x resolution grid of the two free dimensions:
/// x_a, x_b, u_model and, when the exact solution is known, u_exact and diff.
/// Grid points outside a non-box domain are skipped.
inline void export_slice(const FTTModel& model, const ProblemSpec& s, const SliceSpec& sl, std::ostream& out) {
  const int d = model.dim();
  if (s.dim() != d) throw InvalidArgument("export_slice: model and problem dimensions differ");
  if (sl.free_a == sl.free_b || sl.free_a < 0 || sl.free_b < 0 || sl.free_a >= d || sl.free_b >= d)
    throw InvalidArgument("export_slice: need exactly two distinct free dimensions in [1, " + std::to_string(d) + "]");
  if (static_cast<int>(sl.fixed.size()) != d) throw InvalidArgument("export_slice: need one coordinate per dimension");
  if (sl.resolution < 2) throw InvalidArgument("export_slice: resolution must be >= 2");
  const Box bb = s.domain.bounding_box();
  std::vector<std::vector<double>> nodes(d);
  for (int i = 0; i < d; ++i) {
    if (i == sl.free_a || i == sl.free_b) {
      nodes[i] = detail::linspace(bb[i].a, bb[i].b, sl.resolution);
    } else {
      if (!(sl.fixed[i] >= bb[i].a && sl.fixed[i] <= bb[i].b))
        throw InvalidArgument("export_slice: x" + std::to_string(i + 1) + " = " + std::to_string(sl.fixed[i]) +
                              " is outside the domain [" + std::to_string(bb[i].a) + ", " + std::to_string(bb[i].b) + "]");
      nodes[i] = {sl.fixed[i]};
    }
  }
  const auto vals = eval_grid(model, nodes);
  const bool exact = s.has_exact();
  out << 'x' << sl.free_a + 1 << ",x" << sl.free_b + 1 << ",u_model" << (exact ? ",u_exact,diff" : "") << '\n';
  out << std::setprecision(17);
  // eval_grid is row-major over dimensions, so the flat index is (ia, ib) in dimension order.
  const int lo = std::min(sl.free_a, sl.free_b);
  std::vector<double> x = sl.fixed;
  for (int ia = 0; ia < sl.resolution; ++ia)
    for (int ib = 0; ib < sl.resolution; ++ib) {
      x[sl.free_a] = nodes[sl.free_a][ia];
      x[sl.free_b] = nodes[sl.free_b][ib];
      if (!s.domain.contains(x)) continue;
      const int i_lo = lo == sl.free_a ? ia : ib, i_hi = lo == sl.free_a ? ib : ia;
      const double u = vals[static_cast<std::size_t>(i_lo) * sl.resolution + i_hi];
      out << x[sl.free_a] << ',' << x[sl.free_b] << ',' << u;
      if (exact) {
        const double e = s.exact_value(x);
        out << ',' << e << ',' << u - e;
      }
      out << '\n';
    }
}

/// Loss, relative error and (eigenvalue problems) Rayleigh quotient of a saved model.
inline json eval_checkpoint(const FTTModel& model, const ProblemSpec& s, const EvalSpec& e, std::uint64_t seed = 0) {
  if (s.dim() != model.dim()) throw InvalidArgument("eval-checkpoint: model and problem dimensions differ");
  json out = {{"problem", s.name}, {"parameter_count", model.param_count()}};
  out["loss"] = make_objective(s, seed)->evaluate(model, {});
  if (s.has_exact()) out["rel_error"] = ErrorEvaluator(s, e)(model);
  if (s.kind == ProblemKind::eigenvalue) {
    const double q = rayleigh(model, s);
    out["lambda"] = q;
    if (s.exact_lambda) out["lambda_error"] = std::abs(q - *s.exact_lambda);
  }
  if (s.kind == ProblemKind::elliptic) {
    out["residual_loss"] = residual_loss(model, s);
    if (!s.boundary.hard) out["boundary_loss"] = boundary_loss(model, s);
  }
  return out;
}

}  // namespace fttnn
