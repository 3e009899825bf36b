#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pwhf/metric.hpp"
#include "pwhf/potentials.hpp"

namespace pwhf {

enum class BatchPolicy { frozen, per_step };
enum class InnerMode { descent, exact };
enum class Stepper { symplectic_euler, forward_euler };

std::string_view to_string(BatchPolicy v);
std::string_view to_string(InnerMode v);
std::string_view to_string(Stepper v);
BatchPolicy parse_batch_policy(std::string_view s);
InnerMode parse_inner_mode(std::string_view s);
Stepper parse_stepper(std::string_view s);

struct SolverConfig {
  double h = 0.01;
  Eigen::Index steps = 1;
  int inner_iters = 1;
  double gamma = 0.5;
  double minres_tol = 3e-4;
  Eigen::Index minres_max_iter = 0;      // 0: 2·m
  Eigen::Index metric_samples = 50000;
  Eigen::Index potential_samples = 0;    // 0: 12000 for interaction, else the metric batch
  BatchPolicy resample = BatchPolicy::frozen;
  std::uint64_t seed = 1;
  InnerMode inner_mode = InnerMode::descent;
  Stepper stepper = Stepper::symplectic_euler;
  bool warm_start = true;
  bool moment_matched = false;           // antithetic, whitened reference batches
  int max_consecutive_failures = 10;
  Eigen::Index diag_every = 10;          // δ(θ) cadence in steps; 0 disables
  Eigen::Index checkpoint_every = 0;     // 0 disables
  double divergence_bound = 1e8;

  void validate() const;
  SolveOptions solve_options() const { return {minres_tol, minres_max_iter}; }
};

/// Phase-space point of the parameterized flow.
struct ParamState {
  ParamVector theta;
  Vector p;
  double t = 0.0;
  Vector eta;  // last inner-loop velocity ξ
};

struct StepRow {
  Eigen::Index step = 0;
  double t = 0.0;
  double hamiltonian = 0.0;
  double kinetic = 0.0;
  double potential = 0.0;
  Eigen::Index minres_iterations = 0;
  double minres_residual = 0.0;
  bool minres_converged = true;
  double fp_residual = 0.0;  // |Ĝ(α)ξ − p| of the step that produced this state
  std::optional<double> delta;
};

struct Checkpoint {
  Eigen::Index step = 0;
  double t = 0.0;
  ParamVector theta;
  Vector p;
};

struct TrackedSample {
  double t = 0.0;
  Vector position;
  Vector velocity;
};

struct TrajectoryRecord {
  std::vector<StepRow> rows;  // K + 1 rows, including the initial state
  std::vector<Checkpoint> checkpoints;
  std::vector<std::vector<TrackedSample>> tracked;  // one series per tracked point
};

using VectorField = std::function<Vector(const Vector&)>;

/// p⁰ = (1/N) Σ_i ∂_θT_θ(z_i)ᵀ ∇Φ₀(T_θ(z_i)).
Vector init_p(const PushForwardMap& map, const ParamVector& theta0, const VectorField& grad_phi0,
              const SampleBatch& batch);

struct Problem {
  MapDescriptor map;
  PotentialSpec potential;
  VectorField grad_phi0;
  std::optional<ParamVector> theta0;  // default: identity initialization
};

/// Everything the driver reports at state l: the state itself, the velocity
/// Ĝ(θˡ)†pˡ used for tracked points, and the diagnostics row.
struct StateView {
  const ParamState& state;
  const Vector& velocity;
  const StepRow& row;
  const PushForwardMap& map;
};

struct RunOptions {
  std::vector<Vector> tracked_points;  // reference-space points z
  std::function<void(const StateView&)> observer;
  std::function<void(const std::string&)> warn;  // default: stderr
};

/// Symplectic Euler for the parameterized Hamiltonian system
///   θ̇ = Ĝ(θ)†p,   ṗ = ½ θ̇ᵀ ∇_θĜ θ̇ − ∇_θF(θ)
/// with the implicit θ-update resolved by a fixed-point inner loop.
class Solver {
 public:
  Solver(Problem problem, SolverConfig config);
  ~Solver();
  Solver(const Solver&) = delete;
  Solver& operator=(const Solver&) = delete;

  const PushForwardMap& map() const { return map_; }
  const SolverConfig& config() const { return config_; }
  const Problem& problem() const { return problem_; }
  const SampleBatch& metric_batch() const { return *metric_batch_; }
  const SampleBatch& potential_batch() const;

  ParamVector initial_theta() const;
  ParamState initial_state() const;

  /// One outer step l → l+1.
  ParamState step(const ParamState& state);

  TrajectoryRecord run(const RunOptions& opts = {});

  /// Runs from an explicit initial state instead of initial_state().
  TrajectoryRecord run_from(ParamState state, const RunOptions& opts);

 private:
  struct Advance {
    ParamState next;
    double fp_residual = 0.0;
  };
  struct Evaluated;

  void ensure_batches(Eigen::Index step);
  std::shared_ptr<Evaluated> evaluate_at(const ParamVector& theta, bool with_potential);
  SolveReport solve_velocity(const MetricOperator& op, const ParamState& state);
  Advance advance(const ParamState& state, const Evaluated& at_state, const SolveReport& xi0);
  std::optional<double> delta_at(const Evaluated& at_state);
  void note_solve(const SolveReport& r, const char* what, double t);
  void check_state(const ParamState& s) const;

  Problem problem_;
  SolverConfig config_;
  PushForwardMap map_;
  std::shared_ptr<const SampleBatch> metric_batch_;
  std::shared_ptr<const SampleBatch> potential_batch_;  // null: shares the metric batch
  Eigen::Index batch_step_ = 0;
  std::shared_ptr<Evaluated> cached_;
  int consecutive_failures_ = 0;
  std::function<void(const std::string&)> warn_;
};

}  // namespace pwhf
