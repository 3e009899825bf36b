#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pwhf/metric.hpp"
#include "pwhf/oracles.hpp"
#include "pwhf/potentials.hpp"

namespace pwhf {

struct EnergyReport {
  double hamiltonian = 0.0;
  double kinetic = 0.0;
  double potential = 0.0;
  bool converged = true;  // MINRES status of the Ĝ†p solve
};

struct DeltaReport {
  double value = 0.0;
  bool converged = true;
};

struct ErrorRow {
  double t = 0.0;
  double mean_error = 0.0;
  double mse = 0.0;
  double reference_ms = 0.0;  // mean |X(t)|² of the oracle positions
};

struct ErrorReport {
  double eps_hat = 0.0;
  std::vector<ErrorRow> per_time;
};

struct Histogram {
  std::vector<double> edges;
  std::vector<double> counts;
  std::vector<double> density;  // counts / (n · width)
  // Closed-form marginal, present when an oracle was attached.
  std::optional<double> oracle_variance;
  std::vector<double> oracle_density;  // at bin centers; empty for a point mass
  bool point_mass = false;
};

namespace diagnostics {

/// H = ½⟨p, Ĝ†p⟩ + F(θ).
EnergyReport energy(const MetricOperator& op, const Vector& p, const PotentialSpec& potential,
                    const SampleBatch& potential_batch, const SolveOptions& opts);

/// Projection residual of the potential's driving field onto the tangent
/// directions of the map:
///   δ(θ) = E_λ |∇(δℱ/δρ)(T_θ(z)) − ∂_θT_θ(z) η|²,  η = Ĝ†∇F(θ).
/// Expanding the square gives ηᵀĜη − 2∇Fᵀη + E|∇(δℱ/δρ)|²; the residual form
/// is used because it cannot go negative through cancellation. Estimated on
/// the operator's own batch.
DeltaReport delta_theta(const MetricOperator& op, const PotentialSpec& potential,
                        const SolveOptions& opts);

/// x(t) for a particle that starts at x0.
using ParticleOracle = std::function<Vector(const Vector& x0, double t)>;

/// ε̂ = max_l (1/N) Σ_i |T_{θ_l}(z_i) − X(t_l; T_{θ_0}(z_i))| with the shared-z
/// coupling, where X is the oracle flow. The coupled mean squared error is an
/// upper bound on W₂².
ErrorReport traj_error(const PushForwardMap& map, const std::vector<ParamVector>& thetas,
                       const std::vector<double>& times, const SampleBatch& eval,
                       const ParticleOracle& oracle);

/// Freedman–Diaconis bin edges for a sample. Falls back to a single unit bin
/// around the data when the interquartile range is zero.
std::vector<double> freedman_diaconis_edges(std::vector<double> values);

/// Normalized histogram of coordinate `axis` of the snapshot columns. With an
/// oracle attached the Gaussian marginal of variance (1+b²)cos²(√a t − arctan b)
/// is evaluated at the bin centers (unit initial variance assumed); at a
/// singular time the curve is reported as a point mass.
Histogram hist_projection(const Eigen::Ref<const Matrix>& snapshot, Eigen::Index axis,
                          const std::vector<double>& edges,
                          const std::optional<QuadraticSpec>& oracle = std::nullopt,
                          double t = 0.0);

struct DerivativeCheck {
  std::string name;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct DerivativeCheckOptions {
  int trials = 100;
  std::uint64_t seed = 7;
  double fd_tol = 1e-5;
  double adjoint_tol = 1e-12;
  // Added to every jvp result before comparison. Nonzero only for the
  // negative control of the checker itself.
  double perturb = 0.0;
};

/// Finite-difference and adjoint checks of jvp, vjp, jvp_sq_grad, the metric
/// quadratic form and (for a field potential) ∇F, at random θ, z, v, u.
std::vector<DerivativeCheck> check_derivatives(const MapDescriptor& desc,
                                               const DerivativeCheckOptions& opts);

}  // namespace diagnostics
}  // namespace pwhf
