#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pwhf/diagnostics.hpp"
#include "pwhf/integrator.hpp"

namespace pwhf::experiment {

using nlohmann::json;

struct MapConfig {
  MapKind kind = MapKind::affine;
  Eigen::Index dim = 2;
  std::vector<Eigen::Index> hidden;  // resnet; empty selects the default widths
  // Explicit θ⁰ (optional). Affine: gamma + shift, diagonal: scale.
  std::optional<Matrix> gamma;
  std::optional<Vector> shift;
  std::optional<Vector> scale;

  MapDescriptor descriptor() const;
  std::optional<ParamVector> theta0() const;
};

struct PotentialConfig {
  PotentialKind kind = PotentialKind::zero;
  Vector a;            // quadratic
  double b = 0.1;      // interaction softening

  PotentialSpec spec() const;
};

enum class OracleKind { automatic, none, geodesic, harmonic, entropy, particle };

struct RunConfig {
  std::string preset;
  MapConfig map;
  PotentialConfig potential;
  Vector phi0;  // ∇Φ₀(x) = phi0 ∘ x
  SolverConfig solver;
  std::optional<double> t_final;  // sets steps = round(t_final / h) unless steps is explicit
  bool steps_explicit = false;
  std::vector<Vector> tracked_points;
  std::vector<double> snapshot_times;
  Eigen::Index snapshot_samples = 10000;
  Eigen::Index error_samples = 2000;
  OracleKind oracle = OracleKind::automatic;
  Eigen::Index particle_substeps = 10;  // reference step h / substeps
  std::string output_dir = "out";

  /// Fills steps from t_final, checks dimensions, ranges and snapshot times.
  void resolve();
  Problem problem() const;
  OracleKind resolved_oracle() const;
  double horizon() const { return static_cast<double>(solver.steps) * solver.h; }
};

std::string_view to_string(OracleKind kind);
OracleKind parse_oracle_kind(std::string_view s);

struct PresetInfo {
  std::string name;
  std::string summary;
};

std::vector<PresetInfo> presets();
/// Throws ConfigError for an unknown name.
RunConfig preset(const std::string& name);

json to_json(const RunConfig& cfg);
/// Keys present in j override base; unknown keys are rejected. A "preset"
/// key, when present, replaces base by that preset first. A meta.json
/// document is accepted too (its "config" member is used).
RunConfig from_json(const json& j, RunConfig base = {});

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<Eigen::Index> steps;
  std::optional<Eigen::Index> samples;
  std::optional<std::string> out;
  std::optional<Eigen::Index> diag_every;
  std::optional<BatchPolicy> resample;
};

void apply(RunConfig& cfg, const Overrides& o);

struct RunOutcome {
  bool ok = true;
  std::string message;
  std::vector<StepRow> rows;
  std::vector<ErrorRow> errors;  // one per row when an oracle is active
  double eps_hat = 0.0;
  std::vector<Checkpoint> checkpoints;
  std::vector<std::vector<TrackedSample>> tracked;
  std::map<Eigen::Index, Matrix> snapshots;  // step → d × n pushed samples
  double wall_seconds = 0.0;
};

struct ExecuteOptions {
  bool write_files = true;
  std::function<void(const std::string&)> warn;  // default: stderr
};

/// Runs the configured experiment. A solver abort is reported through
/// RunOutcome::ok, with everything up to the abort kept (and written).
RunOutcome execute(RunConfig cfg, const ExecuteOptions& opts = {});

/// Writes every output file of a finished (or aborted) run into cfg.output_dir.
void write_outputs(const RunConfig& cfg, const RunOutcome& out);

/// "%.17g".
std::string format_number(double v);

struct DiffReport {
  bool same_shape = true;
  std::size_t rows = 0;
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::string first_mismatch;  // empty when within tolerance
};

/// Cell-wise comparison of two CSV files with a shared header. Numeric cells
/// match when |a − b| ≤ tol·max(1, |a|, |b|); other cells must be identical.
DiffReport diff_csv(const std::string& path_a, const std::string& path_b, double tol);

}  // namespace pwhf::experiment
