#include "pwhf/oracles.hpp"

#include <cmath>

namespace pwhf {

QuadraticSpec QuadraticSpec::from_initial_phase(Vector a, const Vector& phi0_coefficients) {
  require_size(phi0_coefficients.size(), a.size(), "initial phase coefficients");
  QuadraticSpec s;
  s.b = phi0_coefficients.cwiseQuotient(a.cwiseSqrt());
  s.a = std::move(a);
  s.validate();
  return s;
}

void QuadraticSpec::validate() const {
  require_size(b.size(), a.size(), "QuadraticSpec b");
  for (Eigen::Index k = 0; k < a.size(); ++k)
    if (!(a[k] > 0.0)) throw DomainError("QuadraticSpec: a_k must be positive");
}

namespace oracles {

Vector geodesic_exact(const Vector& x, const VectorField& grad_phi0, double t) {
  return x + t * grad_phi0(x);
}

PhasePoint ho_exact(const Vector& x, const QuadraticSpec& spec, double t) {
  spec.validate();
  require_size(x.size(), spec.a.size(), "ho_exact point");
  PhasePoint out{Vector(x.size()), Vector(x.size())};
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double amp = std::sqrt(1.0 + spec.b[k] * spec.b[k]) * x[k];
    const double w = std::sqrt(spec.a[k]);
    const double phase = w * t - std::atan(spec.b[k]);
    out.position[k] = amp * std::cos(phase);
    out.velocity[k] = -amp * w * std::sin(phase);
  }
  return out;
}

EntropyTrajectory entropy_oracle(const std::vector<double>& t_grid, double D0, double Ddot0,
                                 double max_step) {
  if (!(D0 > 0.0)) throw DomainError("entropy oracle: D0 must be positive");
  EntropyTrajectory out;
  double t = 0.0, D = D0, V = Ddot0;
  // (D, Ḋ)' = (Ḋ, 1/D)
  auto rk4 = [&](double h) {
    const double k1d = V, k1v = 1.0 / D;
    const double k2d = V + 0.5 * h * k1v, k2v = 1.0 / (D + 0.5 * h * k1d);
    const double k3d = V + 0.5 * h * k2v, k3v = 1.0 / (D + 0.5 * h * k2d);
    const double k4d = V + h * k3v, k4v = 1.0 / (D + h * k3d);
    D += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
    V += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  };
  for (const double target : t_grid) {
    if (target < t) throw ConfigError("entropy oracle: time grid must be nondecreasing from 0");
    const double span = target - t;
    if (span > 0.0) {
      const double step = std::min(max_step, span / 100.0);
      const auto n = static_cast<long>(std::ceil(span / step - 1e-9));
      const double h = span / static_cast<double>(n);
      for (long i = 0; i < n; ++i) rk4(h);
      t = target;
    }
    out.t.push_back(t);
    out.D.push_back(D);
    out.Ddot.push_back(V);
  }
  return out;
}

std::vector<ParticleEnsemble> particle_reference(const ParticleEnsemble& initial,
                                                 const PotentialSpec& potential, double h_ref,
                                                 Eigen::Index steps, Eigen::Index record_every) {
  if (!potential.has_field())
    throw ConfigError("particle reference needs a potential with a pointwise field");
  require_size(initial.velocities.rows(), initial.positions.rows(), "ensemble velocity rows");
  require_size(initial.velocities.cols(), initial.positions.cols(), "ensemble velocity count");
  if (record_every < 1) record_every = 1;

  std::vector<ParticleEnsemble> out{initial};
  ParticleEnsemble s = initial;
  Matrix accel = -potentials::field(potential, s.positions);
  for (Eigen::Index step = 1; step <= steps; ++step) {
    s.velocities += 0.5 * h_ref * accel;
    s.positions += h_ref * s.velocities;
    accel = -potentials::field(potential, s.positions);
    s.velocities += 0.5 * h_ref * accel;
    s.t = initial.t + static_cast<double>(step) * h_ref;
    if (!s.positions.allFinite() || !s.velocities.allFinite())
      throw SolverAbort("particle reference: non-finite state at t = " + std::to_string(s.t));
    if (step % record_every == 0 || step == steps) out.push_back(s);
  }
  return out;
}

double ensemble_energy(const ParticleEnsemble& ens, const PotentialSpec& potential) {
  const double kinetic = 0.5 * ens.velocities.colwise().squaredNorm().mean();
  return kinetic + potentials::ensemble_value(potential, ens.positions);
}

}  // namespace oracles
}  // namespace pwhf
