#include <doctest.h>

#include "pwhf/integrator.hpp"
#include "support.hpp"

using namespace pwhf;
using testing::Gen;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

VectorField linear_field(Vector beta) {
  return [beta](const Vector& x) { return Vector(beta.cwiseProduct(x)); };
}

// Textbook symplectic Euler for H = ½pᵀG⁻¹p + F(θ) with constant G, written
// directly against the affine parameterization: θ⁺ = θ + hG⁻¹p, p⁺ = p − h∇F(θ⁺).
struct AffineQuadraticReference {
  Matrix Z;  // d × N
  Vector a;
  Matrix G;

  AffineQuadraticReference(Matrix z, Vector coeffs) : Z(std::move(z)), a(std::move(coeffs)) {
    const Eigen::Index d = Z.rows(), N = Z.cols();
    // Columns of ∂_θT(z) for θ = [Γ row-major, b]: ∂x_k/∂Γ_kj = z_j, ∂x_k/∂b_k = 1.
    G = Matrix::Zero(d * d + d, d * d + d);
    for (Eigen::Index i = 0; i < N; ++i) {
      Matrix J = Matrix::Zero(d, d * d + d);
      for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index j = 0; j < d; ++j) J(k, k * d + j) = Z(j, i);
        J(k, d * d + k) = 1.0;
      }
      G += J.transpose() * J;
    }
    G /= static_cast<double>(N);
  }

  Vector grad_F(const Vector& theta) const {
    const Eigen::Index d = Z.rows(), N = Z.cols();
    Vector g = Vector::Zero(theta.size());
    for (Eigen::Index i = 0; i < N; ++i) {
      Vector x = theta.tail(d);
      for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index j = 0; j < d; ++j) x[k] += theta[k * d + j] * Z(j, i);
      for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index j = 0; j < d; ++j) g[k * d + j] += a[k] * x[k] * Z(j, i);
        g[d * d + k] += a[k] * x[k];
      }
    }
    return g / static_cast<double>(N);
  }

  void step(Vector& theta, Vector& p, double h) const {
    theta += h * G.ldlt().solve(p);
    p -= h * grad_F(theta);
  }
};

}  // namespace

TEST_CASE("init_p examples") {
  PushForwardMap dia(MapDescriptor::diagonal(1));
  const SampleBatch pm = SampleBatch::from_points((Matrix(1, 2) << 1, -1).finished());
  const Vector p = init_p(dia, Vector::Ones(1), linear_field(Vector::Ones(1)), pm);
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-15));

  PushForwardMap aff(MapDescriptor::affine(2));
  const SampleBatch mm = SampleBatch::moment_matched_normal(2, 400, 8);
  CHECK(init_p(aff, aff.init_identity(1), nullptr, mm).norm() == 0.0);
  CHECK(init_p(aff, aff.init_identity(1), linear_field(Vector::Zero(2)), mm).norm() == 0.0);

  // Φ₀ = ½xᵀMx with M = diag(−1, 0.5): p⁰ = (M, 0) under exact moments.
  const Vector p0 = init_p(aff, aff.init_identity(1), linear_field(v2(-1.0, 0.5)), mm);
  const Vector expect = (Vector(6) << -1, 0, 0, 0.5, 0, 0).finished();
  CHECK((p0 - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one step of the entropy example by hand") {
  Problem pr{MapDescriptor::diagonal(1), PotentialSpec::entropy_diagonal(), nullptr, std::nullopt};
  SolverConfig cfg;
  cfg.h = 0.01;
  cfg.metric_samples = 2;  // moment matching turns this into {1, −1}
  cfg.moment_matched = true;
  for (double gamma : {0.1, 0.5, 1.7}) {
    cfg.gamma = gamma;
    Solver s(pr, cfg);
    REQUIRE(std::abs(std::abs(s.metric_batch().points(0, 0)) - 1.0) < 1e-15);
    ParamState st{Vector::Ones(1), Vector::Ones(1), 0.0, {}};
    const ParamState next = s.step(st);
    CHECK(next.eta[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(next.theta[0] == doctest::Approx(1.01).epsilon(1e-14));
    CHECK(next.p[0] == doctest::Approx(1.0 + 0.01 / 1.01).epsilon(1e-14));
    CHECK(next.p[0] == doctest::Approx(1.00990099).epsilon(1e-8));
  }
}

TEST_CASE("zero potential on a constant identity metric moves in straight lines") {
  Problem pr{MapDescriptor::affine(2), PotentialSpec::zero(), linear_field(v2(-1.0, 0.3)),
             std::nullopt};
  SolverConfig cfg;
  cfg.h = 0.05;
  cfg.steps = 40;
  cfg.metric_samples = 64;
  cfg.moment_matched = true;
  cfg.minres_tol = 1e-13;
  Solver s(pr, cfg);
  const ParamState s0 = s.initial_state();
  ParamState st = s0;
  for (int k = 0; k < 40; ++k) {
    st = s.step(st);
    CHECK(st.p == s0.p);
  }
  CHECK((st.theta - (s0.theta + 40 * 0.05 * s0.p)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affine quadratic steps agree with an independent symplectic Euler") {
  const Vector a = v2(2.25, 0.36);
  Problem pr{MapDescriptor::affine(2), PotentialSpec::quadratic(a), linear_field(v2(-1.0, 0.0)),
             std::nullopt};
  SolverConfig cfg;
  cfg.h = 0.01;
  cfg.metric_samples = 50;  // Ĝ constant but not the identity
  cfg.minres_tol = 1e-14;
  Solver s(pr, cfg);
  AffineQuadraticReference ref(s.metric_batch().points, a);

  ParamState st = s.initial_state();
  Vector theta = st.theta, p = st.p;
  for (int k = 0; k < 25; ++k) {
    st = s.step(st);
    ref.step(theta, p, cfg.h);
    CHECK((st.theta - theta).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((st.p - p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("run records") {
  Problem pr{MapDescriptor::affine(2), PotentialSpec::quadratic(v2(2.25, 0.36)),
             linear_field(v2(-1.0, 0.0)), std::nullopt};
  SolverConfig cfg;
  cfg.metric_samples = 500;

  SUBCASE("K = 0 gives the initial row only") {
    cfg.steps = 0;
    Solver s(pr, cfg);
    const auto rec = s.run();
    REQUIRE(rec.rows.size() == 1);
    CHECK(rec.rows[0].t == 0.0);
    CHECK(rec.rows[0].delta.has_value());
  }
  SUBCASE("row count, time grid, diagnostics cadence, tracked points") {
    cfg.steps = 25;
    cfg.h = 0.02;
    cfg.diag_every = 10;
    cfg.checkpoint_every = 5;
    Solver s(pr, cfg);
    RunOptions ro;
    ro.tracked_points = {v2(1, 0), v2(0, 1)};
    int seen = 0;
    ro.observer = [&](const StateView&) { ++seen; };
    const auto rec = s.run(ro);
    REQUIRE(rec.rows.size() == 26);
    CHECK(seen == 26);
    CHECK(rec.rows[25].t == 25 * 0.02);
    for (const auto& r : rec.rows) {
      CHECK(r.delta.has_value() == (r.step % 10 == 0 || r.step == 25));
      CHECK(r.hamiltonian == r.kinetic + r.potential);
    }
    CHECK(rec.checkpoints.size() == 6);
    REQUIRE(rec.tracked.size() == 2);
    CHECK(rec.tracked[0].size() == 26);
    CHECK((rec.tracked[0][0].position - v2(1, 0)).norm() < 1e-15);
  }
  SUBCASE("frozen batches are deterministic") {
    cfg.steps = 20;
    Solver s1(pr, cfg), s2(pr, cfg);
    const auto r1 = s1.run(), r2 = s2.run();
    REQUIRE(r1.rows.size() == r2.rows.size());
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
      CHECK(r1.rows[i].hamiltonian == r2.rows[i].hamiltonian);
      CHECK(r1.rows[i].potential == r2.rows[i].potential);
    }
  }
  SUBCASE("per-step resampling draws new batches but stays reproducible") {
    cfg.steps = 5;
    cfg.resample = BatchPolicy::per_step;
    Solver s1(pr, cfg), s2(pr, cfg);
    const auto r1 = s1.run(), r2 = s2.run();
    SolverConfig frozen = cfg;
    frozen.resample = BatchPolicy::frozen;
    Solver s3(pr, frozen);
    const auto r3 = s3.run();
    CHECK(r1.rows.back().potential == r2.rows.back().potential);
    CHECK(r1.rows.back().potential != r3.rows.back().potential);
  }
}

TEST_CASE("fixed-point residual does not grow with more inner iterations") {
  Gen g(51);
  const MapDescriptor desc = MapDescriptor::resnet(2, 6, 6);
  PushForwardMap map(desc);
  const Vector theta0 = testing::random_params(desc, g);
  Problem pr{desc, PotentialSpec::quadratic(v2(2.25, 0.36)), linear_field(v2(-1.0, 0.0)),
             theta0};
  SolverConfig cfg;
  cfg.h = 0.01;
  cfg.steps = 1;
  cfg.metric_samples = 300;
  cfg.minres_tol = 1e-8;
  RunOptions quiet;
  quiet.warn = [](const std::string&) {};

  // λ_max(Ĝ(θ⁰)) by power iteration.
  Solver probe(pr, cfg);
  const MetricOperator op(map, probe.metric_batch(), theta0);
  Vector v = g.normal_vec(map.param_count()).normalized();
  double lam = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Vector w = op.apply(v);
    lam = w.norm();
    v = w / lam;
  }
  cfg.gamma = 0.9 / lam;

  double previous = std::numeric_limits<double>::infinity();
  for (int n_in = 1; n_in <= 6; ++n_in) {
    cfg.inner_iters = n_in;
    Solver s(pr, cfg);
    const double r = s.run(quiet).rows.back().fp_residual;
    CHECK(r <= previous * (1.0 + 1e-9));
    previous = r;
  }
}

TEST_CASE("guards") {
  Problem pr{MapDescriptor::affine(2), PotentialSpec::quadratic(v2(2.25, 0.36)),
             linear_field(v2(-1.0, 0.0)), std::nullopt};
  SolverConfig cfg;
  cfg.metric_samples = 100;
  SUBCASE("invalid configuration") {
    for (auto mutate : std::vector<std::function<void(SolverConfig&)>>{
             [](SolverConfig& c) { c.h = 0.0; }, [](SolverConfig& c) { c.inner_iters = 0; },
             [](SolverConfig& c) { c.gamma = -1.0; },
             [](SolverConfig& c) { c.metric_samples = 0; }}) {
      SolverConfig bad = cfg;
      mutate(bad);
      CHECK_THROWS_AS(Solver(pr, bad), ConfigError);
    }
  }
  SUBCASE("divergence bound aborts the run") {
    cfg.steps = 100;
    cfg.h = 0.05;
    cfg.divergence_bound = 1.42;  // |θ⁰| = √2
    Solver s(pr, cfg);
    CHECK_THROWS_AS(s.run(), SolverAbort);
  }
  SUBCASE("non-finite state aborts") {
    Solver s(pr, cfg);
    ParamState st = s.initial_state();
    st.p[0] = std::nan("");
    CHECK_THROWS_AS(s.step(st), SolverAbort);
  }
}
