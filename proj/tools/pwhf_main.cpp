#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pwhf/diagnostics.hpp"
#include "pwhf/experiment.hpp"

using namespace pwhf;
namespace ex = pwhf::experiment;

namespace {

int run_command(const std::string& preset_name, const std::string& config_path,
                const ex::Overrides& ov) {
  ex::RunConfig cfg;
  if (!preset_name.empty()) cfg = ex::preset(preset_name);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config " + config_path);
    ex::json doc;
    try {
      doc = ex::json::parse(in);
    } catch (const ex::json::parse_error& e) {
      throw ConfigError(config_path + ": " + e.what());
    }
    cfg = ex::from_json(doc, cfg);
  }
  if (preset_name.empty() && config_path.empty())
    throw ConfigError("run needs --preset or --config");
  ex::apply(cfg, ov);
  cfg.resolve();

  std::cerr << "running " << (cfg.preset.empty() ? "config" : cfg.preset) << ": "
            << cfg.solver.steps << " steps of h=" << cfg.solver.h
            << ", N=" << cfg.solver.metric_samples << ", output " << cfg.output_dir << '\n';
  const ex::RunOutcome out = ex::execute(cfg);
  if (!out.rows.empty()) {
    const StepRow& last = out.rows.back();
    std::printf("t=%s H=%s KE=%s PE=%s\n", ex::format_number(last.t).c_str(),
                ex::format_number(last.hamiltonian).c_str(),
                ex::format_number(last.kinetic).c_str(), ex::format_number(last.potential).c_str());
  }
  if (!out.errors.empty()) std::printf("eps_hat=%s\n", ex::format_number(out.eps_hat).c_str());
  std::printf("wall=%.1fs\n", out.wall_seconds);
  if (!out.ok) {
    std::cerr << "error: run aborted: " << out.message << '\n';
    return 2;
  }
  return 0;
}

int check_command(const std::string& map_kind, Eigen::Index dim, Eigen::Index width,
                  const diagnostics::DerivativeCheckOptions& opts) {
  const MapKind kind = parse_map_kind(map_kind);
  MapDescriptor desc;
  switch (kind) {
    case MapKind::affine: desc = MapDescriptor::affine(dim); break;
    case MapKind::diagonal: desc = MapDescriptor::diagonal(dim); break;
    case MapKind::resnet:
      desc = width > 0 ? MapDescriptor::resnet(dim, width, width) : MapDescriptor::resnet(dim);
      break;
  }
  bool all = true;
  for (const auto& c : diagnostics::check_derivatives(desc, opts)) {
    std::printf("%-26s max_err=%-12.3e threshold=%-9.1e %s\n", c.name.c_str(), c.max_error,
                c.threshold, c.passed ? "ok" : "FAILED");
    all = all && c.passed;
  }
  return all ? 0 : 1;
}

int diff_command(const std::string& a, const std::string& b, double tol) {
  const ex::DiffReport r = ex::diff_csv(a, b, tol);
  std::printf("rows=%zu max_abs=%.3e max_rel=%.3e\n", r.rows, r.max_abs, r.max_rel);
  if (!r.first_mismatch.empty()) {
    std::printf("differ: %s\n", r.first_mismatch.c_str());
    return 1;
  }
  std::printf("match within %.3g\n", tol);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameterized Wasserstein Hamiltonian flow solver"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "integrate a preset or config file and write outputs");
  std::string preset_name, config_path, resample;
  ex::Overrides ov;
  run->add_option("--preset", preset_name, "preset name (see list-presets)");
  run->add_option("--config", config_path, "JSON config or a meta.json from an earlier run");
  run->add_option("--seed", ov.seed, "base seed");
  run->add_option("--dt", ov.dt, "time step h")->check(CLI::PositiveNumber);
  run->add_option("--steps", ov.steps, "outer steps K (default: t_final / h)")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--samples", ov.samples, "metric batch size")->check(CLI::PositiveNumber);
  run->add_option("--out", ov.out, "output directory");
  run->add_option("--diag-every", ov.diag_every, "delta(theta) cadence, 0 disables")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--resample", resample, "frozen | per_step");

  auto* check = app.add_subcommand("check-derivatives", "finite-difference derivative checks");
  std::string map_kind = "resnet";
  Eigen::Index dim = 2, width = 0;
  diagnostics::DerivativeCheckOptions dopts;
  check->add_option("--map", map_kind, "affine | diagonal | resnet")->capture_default_str();
  check->add_option("--dim", dim, "dimension d")->capture_default_str();
  check->add_option("--width", width, "resnet hidden width (default by d)");
  check->add_option("--trials", dopts.trials)->capture_default_str();
  check->add_option("--seed", dopts.seed)->capture_default_str();
  check->add_option("--perturb", dopts.perturb, "offset added to every jvp (negative control)");

  auto* list = app.add_subcommand("list-presets", "print the preset table");

  auto* diff = app.add_subcommand("diff", "compare two CSV outputs cell by cell");
  std::string file_a, file_b;
  double tol = 0.0;
  diff->add_option("a", file_a)->required()->check(CLI::ExistingFile);
  diff->add_option("b", file_b)->required()->check(CLI::ExistingFile);
  diff->add_option("--tol", tol, "relative tolerance (0: exact)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!resample.empty()) ov.resample = parse_batch_policy(resample);
      return run_command(preset_name, config_path, ov);
    }
    if (*check) return check_command(map_kind, dim, width, dopts);
    if (*list) {
      for (const auto& p : ex::presets()) std::printf("%-20s %s\n", p.name.c_str(), p.summary.c_str());
      return 0;
    }
    if (*diff) return diff_command(file_a, file_b, tol);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
