#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "fttnn/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

// A problem for export-slice and eval-checkpoint: a builtin name or the problem of a config file.
fttnn::ExperimentConfig resolve(const std::string& problem, const std::string& config) {
  if (problem.empty() == config.empty()) throw fttnn::ConfigError("problem", "give exactly one of --problem or --config");
  if (!config.empty()) return fttnn::load_config(config);
  return fttnn::parse_config(fttnn::json{{"problem", problem}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional tensor-train neural network PDE solver"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  long long seed = -1;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train per a JSON config; writes metrics.csv, checkpoints and summary.json");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--output-dir", output_dir, "Override output_dir");
  run->add_option("--seed", seed, "Override the root seed");
  run->add_flag("-q,--quiet", quiet, "Only print the summary");

  auto* val = app.add_subcommand("validate", "Resolve a config and print what would run");
  val->add_option("config", config_path, "Config file")->required();

  app.add_subcommand("list-problems", "List builtin problems with their settings");

  std::string ckpt, problem, out_path;
  std::vector<int> free_dims;
  std::vector<std::string> fixes;
  int resolution = 101;
  auto* slice = app.add_subcommand("export-slice", "Write a 2-D slice of a checkpoint as CSV");
  slice->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  slice->add_option("--problem", problem, "Builtin problem name");
  slice->add_option("--config", config_path, "Config file whose problem to use");
  slice->add_option("--free", free_dims, "The two free dimensions, 1-based")->expected(2)->required();
  slice->add_option("--fix", fixes, "Fixed coordinate as DIM=VALUE (1-based, repeatable); unset dims use the box midpoint");
  slice->add_option("--resolution", resolution, "Points per free dimension")->check(CLI::Range(2, 100000));
  slice->add_option("-o,--output", out_path, "Output CSV (default: stdout)");

  auto* evalc = app.add_subcommand("eval-checkpoint", "Print loss, relative error and eigenvalue of a checkpoint as JSON");
  evalc->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  evalc->add_option("--problem", problem, "Builtin problem name");
  evalc->add_option("--config", config_path, "Config file whose problem to use");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    fttnn::thread_count();
    if (run->parsed()) {
      auto c = fttnn::load_config(config_path);
      if (!output_dir.empty()) c.output_dir = output_dir;
      if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
      const auto res = fttnn::run(c, quiet ? nullptr : &std::cerr);
      std::cout << std::setw(2) << res.summary << '\n';
    } else if (val->parsed()) {
      std::cout << fttnn::validate(fttnn::load_config(config_path));
    } else if (app.got_subcommand("list-problems")) {
      for (const auto& line : fttnn::list_problems()) std::cout << line << '\n';
    } else if (slice->parsed()) {
      const auto c = resolve(problem, config_path);
      const auto model = fttnn::load_checkpoint(ckpt);
      const int d = model.dim();
      fttnn::SliceSpec sl;
      sl.resolution = resolution;
      for (const auto& iv : c.problem.domain.bounding_box()) sl.fixed.push_back(0.5 * (iv.a + iv.b));
      sl.free_a = free_dims[0] - 1;
      sl.free_b = free_dims[1] - 1;
      for (const auto& f : fixes) {
        const auto eq = f.find('=');
        std::size_t used = 0;
        int dim = 0;
        double value = 0.0;
        try {
          if (eq == std::string::npos) throw std::invalid_argument(f);
          dim = std::stoi(f.substr(0, eq), &used);
          if (used != eq) throw std::invalid_argument(f);
          value = std::stod(f.substr(eq + 1), &used);
          if (used != f.size() - eq - 1) throw std::invalid_argument(f);
        } catch (const std::exception&) {
          throw fttnn::ConfigError("--fix", "expected DIM=VALUE, got '" + f + "'");
        }
        if (dim < 1 || dim > d) throw fttnn::ConfigError("--fix", "dimension " + std::to_string(dim) + " out of range");
        sl.fixed[dim - 1] = value;
      }
      if (out_path.empty()) {
        fttnn::export_slice(model, c.problem, sl, std::cout);
      } else {
        std::ofstream out(out_path);
        if (!out) throw fttnn::ResourceError("cannot write '" + out_path + "'");
        fttnn::export_slice(model, c.problem, sl, out);
      }
    } else if (evalc->parsed()) {
      const auto c = resolve(problem, config_path);
      std::cout << std::setw(2) << fttnn::eval_checkpoint(fttnn::load_checkpoint(ckpt), c.problem, c.eval, c.seed) << '\n';
    }
  } catch (const fttnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fttnn::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fttnn::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitOk;
}
