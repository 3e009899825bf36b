#pragma once

#include <functional>
#include <vector>

#include "pwhf/potentials.hpp"

namespace pwhf {

/// Diagonal harmonic oscillator V(x) = ½ Σ a_k x_k² with the closed-form
/// particle solution X_k(t) = √(1+b_k²) x_k cos(√a_k t − arctan b_k).
///
/// b is a phase coefficient: the solution starts with velocity √a_k b_k x_k.
/// For an initial potential Φ₀(x) = ½ Σ β_k x_k² use from_initial_phase,
/// which sets b_k = β_k / √a_k.
struct QuadraticSpec {
  Vector a;
  Vector b;

  static QuadraticSpec from_initial_phase(Vector a, const Vector& phi0_coefficients);
  void validate() const;
};

struct ParticleEnsemble {
  Matrix positions;   // d × N
  Matrix velocities;  // d × N
  double t = 0.0;
};

struct PhasePoint {
  Vector position;
  Vector velocity;
};

struct EntropyTrajectory {
  std::vector<double> t;
  std::vector<double> D;
  std::vector<double> Ddot;
};

namespace oracles {

using VectorField = std::function<Vector(const Vector&)>;

/// Straight-line Wasserstein geodesic x + t ∇Φ₀(x).
Vector geodesic_exact(const Vector& x, const VectorField& grad_phi0, double t);

PhasePoint ho_exact(const Vector& x, const QuadraticSpec& spec, double t);

/// D̈ = 1/D by classical RK4, substep min(max_step, spacing/100) on every
/// grid interval. Grid must be nondecreasing and start at t ≥ 0.
EntropyTrajectory entropy_oracle(const std::vector<double>& t_grid, double D0 = 1.0,
                                 double Ddot0 = 1.0, double max_step = 1e-4);

/// Particle-level reference ẍ_i = −∇(δℱ/δρ)(x_i) by velocity Verlet.
/// Returns the ensemble every record_every steps, starting with the initial one.
std::vector<ParticleEnsemble> particle_reference(const ParticleEnsemble& initial,
                                                 const PotentialSpec& potential, double h_ref,
                                                 Eigen::Index steps,
                                                 Eigen::Index record_every = 1);

/// ½ mean |v|² + potential energy of the ensemble.
double ensemble_energy(const ParticleEnsemble& ens, const PotentialSpec& potential);

}  // namespace oracles
}  // namespace pwhf
