#include <doctest.h>

#include <numbers>

#include "pwhf/diagnostics.hpp"
#include "support.hpp"

using namespace pwhf;
using testing::Gen;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

}  // namespace

TEST_CASE("energy") {
  PushForwardMap aff(MapDescriptor::affine(2));
  const SampleBatch mm = SampleBatch::moment_matched_normal(2, 1000, 4);
  const MetricOperator op(aff, mm, aff.init_identity(1));
  const PotentialSpec quad = PotentialSpec::quadratic(v2(2.25, 0.36));

  const auto rest = diagnostics::energy(op, Vector::Zero(6), quad, mm, {});
  CHECK(rest.kinetic == 0.0);
  CHECK(rest.hamiltonian == doctest::Approx(1.305).epsilon(1e-12));

  const Vector p = (Vector(6) << 3, 4, 0, 0, 0, 0).finished();
  const auto moving = diagnostics::energy(op, p, PotentialSpec::zero(), mm, {1e-12, 0});
  CHECK(moving.kinetic == doctest::Approx(12.5).epsilon(1e-10));
  CHECK(moving.hamiltonian == moving.kinetic + moving.potential);
}

TEST_CASE("delta(theta)") {
  Gen g(71);
  const SampleBatch batch = SampleBatch::standard_normal(2, 400, 6);
  PushForwardMap res(MapDescriptor::resnet(2, 6, 6));
  SUBCASE("zero potential gives exactly zero") {
    const MetricOperator op(res, batch, testing::random_params(res.descriptor(), g));
    CHECK(diagnostics::delta_theta(op, PotentialSpec::zero(), {}).value == 0.0);
  }
  SUBCASE("affine map represents a quadratic field exactly") {
    PushForwardMap aff(MapDescriptor::affine(2));
    const SolveOptions opts{3e-4, 0};
    for (int trial = 0; trial < 5; ++trial) {
      const MetricOperator op(aff, batch, testing::random_params(aff.descriptor(), g));
      const auto r = diagnostics::delta_theta(op, PotentialSpec::quadratic(v2(2.25, 0.36)), opts);
      CHECK(r.value <= 10.0 * opts.tol);
      CHECK(r.value >= -1e-8);
    }
  }
  SUBCASE("nonnegative for resnet and interaction") {
    for (int trial = 0; trial < 5; ++trial) {
      const MetricOperator op(res, batch, testing::random_params(res.descriptor(), g));
      CHECK(diagnostics::delta_theta(op, PotentialSpec::interaction(0.1), {}).value >= -1e-8);
      CHECK(diagnostics::delta_theta(op, PotentialSpec::quadratic(v2(1, 2)), {}).value >= -1e-8);
    }
  }
  SUBCASE("entropy has no pointwise field") {
    PushForwardMap dia(MapDescriptor::diagonal(2));
    const MetricOperator op(dia, batch, Vector::Ones(2));
    CHECK_THROWS_AS(diagnostics::delta_theta(op, PotentialSpec::entropy_diagonal(), {}), ConfigError);
  }
}

TEST_CASE("traj_error") {
  PushForwardMap aff(MapDescriptor::affine(2));
  const SampleBatch eval = SampleBatch::standard_normal(2, 300, 8);
  // θ_l for the straight-line flow x ↦ x + t(−x₁, 0): Γ = diag(1 − t, 1).
  std::vector<ParamVector> thetas;
  std::vector<double> times;
  for (int l = 0; l <= 10; ++l) {
    const double t = 0.25 * l;
    thetas.push_back(aff.affine_params((Matrix(2, 2) << 1 - t, 0, 0, 1).finished(), v2(0, 0)));
    times.push_back(t);
  }
  const auto exact = diagnostics::traj_error(aff, thetas, times, eval, [](const Vector& x, double t) {
    return oracles::geodesic_exact(x, [](const Vector& y) { return v2(-y[0], 0.0); }, t);
  });
  CHECK(exact.eps_hat < 1e-14);
  CHECK(exact.per_time.size() == 11);

  const auto frozen = diagnostics::traj_error(aff, thetas, times, eval,
                                              [](const Vector& x, double) { return x; });
  double max_mean = 0.0;
  for (const auto& r : frozen.per_time) {
    CHECK(r.mse >= 0.0);
    CHECK(r.mse >= r.mean_error * r.mean_error * (1.0 - 1e-12));  // Jensen
    max_mean = std::max(max_mean, r.mean_error);
  }
  CHECK(frozen.eps_hat == max_mean);
  CHECK(frozen.per_time.front().mean_error == 0.0);
}

TEST_CASE("histogram projection") {
  Gen g(73);
  Vector a = Vector::Ones(10);
  a[0] = 0.75;
  Vector beta = Vector::Ones(10);
  beta[0] = 0.0;
  const QuadraticSpec spec = QuadraticSpec::from_initial_phase(a, beta);
  const Matrix snap = g.normal_mat(10, 5000);
  std::vector<double> axis(static_cast<std::size_t>(snap.cols()));
  for (Eigen::Index i = 0; i < snap.cols(); ++i) axis[static_cast<std::size_t>(i)] = snap(1, i);
  const auto fd = diagnostics::freedman_diaconis_edges(axis);
  CHECK(fd.size() >= 3);

  const auto h0 = diagnostics::hist_projection(snap, 1, fd, spec, 0.0);
  REQUIRE(h0.oracle_variance.has_value());
  CHECK(*h0.oracle_variance == doctest::Approx(1.0).epsilon(1e-14));
  double mass = 0.0;
  for (std::size_t k = 0; k + 1 < fd.size(); ++k) mass += h0.density[k] * (fd[k + 1] - fd[k]);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h0.oracle_density.size() == fd.size() - 1);

  const auto hs = diagnostics::hist_projection(snap, 1, fd, spec, std::numbers::pi * 0.75);
  CHECK(hs.point_mass);
  CHECK(*hs.oracle_variance < 1e-12);
  CHECK(hs.oracle_density.empty());
  double counted = 0.0;
  for (double c : hs.counts) counted += c;
  CHECK(counted == 5000.0);

  CHECK_THROWS_AS(diagnostics::hist_projection(snap, 1, {}, spec, 0.0), ConfigError);
  CHECK_THROWS_AS(diagnostics::hist_projection(snap, 1, {0.0, 0.0}), ConfigError);
}

TEST_CASE("Freedman-Diaconis edges") {
  const auto flat = diagnostics::freedman_diaconis_edges({2.0, 2.0, 2.0});
  REQUIRE(flat.size() == 2);
  CHECK(flat[0] < 2.0);
  CHECK(flat[1] > 2.0);
  Gen g(74);
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(g.normal());
  const auto e = diagnostics::freedman_diaconis_edges(xs);
  CHECK(e.front() == *std::min_element(xs.begin(), xs.end()));
  CHECK(e.back() == *std::max_element(xs.begin(), xs.end()));
  CHECK_THROWS(diagnostics::freedman_diaconis_edges({}));
}
