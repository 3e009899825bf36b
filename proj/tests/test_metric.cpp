#include <doctest.h>

#include "pwhf/metric.hpp"
#include "pwhf/parallel.hpp"
#include "support.hpp"

using namespace pwhf;
using testing::Gen;

namespace {

Matrix brute_force_metric(const PushForwardMap& map, const Vector& theta, const Matrix& Z) {
  Matrix G = Matrix::Zero(map.param_count(), map.param_count());
  for (Eigen::Index i = 0; i < Z.cols(); ++i) {
    const Matrix J = testing::jvp_jacobian(map, theta, Z.col(i));
    G += J.transpose() * J;
  }
  return G / static_cast<double>(Z.cols());
}

SampleBatch symmetric_batch() {
  const double r = std::sqrt(2.0);
  Matrix Z(2, 4);
  Z << r, -r, 0, 0, 0, 0, r, -r;
  return SampleBatch::from_points(Z);
}

}  // namespace

TEST_CASE("apply matches the assembled metric") {
  Gen g(31);
  PushForwardMap map(MapDescriptor::resnet(2, 5, 5));
  REQUIRE(map.param_count() <= 60);
  const Vector th = testing::random_params(map.descriptor(), g);
  const Matrix Z = g.normal_mat(2, 100);
  const SampleBatch batch = SampleBatch::from_points(Z);
  const MetricOperator op(map, batch, th);
  const Matrix G = brute_force_metric(map, th, Z);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector eta = g.normal_vec(map.param_count());
    CHECK((op.apply(eta) - G * eta).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("metric is positive semi-definite") {
  Gen g(32);
  PushForwardMap map(MapDescriptor::resnet(3, 6, 6));
  const SampleBatch batch = SampleBatch::standard_normal(3, 300, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const MetricOperator op(map, batch, testing::random_params(map.descriptor(), g));
    const Vector eta = g.normal_vec(map.param_count());
    CHECK(op.apply(eta).dot(eta) >= 0.0);
  }
}

TEST_CASE("identity metric on a symmetric batch") {
  PushForwardMap map(MapDescriptor::affine(2));
  const SampleBatch batch = symmetric_batch();
  const MetricOperator op(map, batch, map.init_identity(1));
  const Vector eta = (Vector(6) << 1, -2, 3, 0.5, 7, -1).finished();
  CHECK((op.apply(eta) - eta).norm() < 1e-14);

  const Vector p = (Vector(6) << 2, 1, 1, 1, 1, 1).finished();
  const SolveReport r = op.solve(p, {});
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK((r.solution - p).norm() < 1e-14);
}

TEST_CASE("quadratic_grad") {
  Gen g(33);
  SUBCASE("zero for linear families") {
    const SampleBatch batch = SampleBatch::standard_normal(2, 50, 1);
    for (const auto& desc : {MapDescriptor::affine(2), MapDescriptor::diagonal(2)}) {
      PushForwardMap map(desc);
      const MetricOperator op(map, batch, testing::random_params(desc, g));
      CHECK(op.quadratic_grad(g.normal_vec(map.param_count())).norm() == 0.0);
    }
  }
  SUBCASE("directional derivative of the quadratic form") {
    PushForwardMap map(MapDescriptor::resnet(2, 5, 5));
    const Matrix Z = g.normal_mat(2, 40);
    const SampleBatch batch = SampleBatch::from_points(Z);
    for (int trial = 0; trial < 5; ++trial) {
      const Vector th = testing::random_params(map.descriptor(), g);
      const Vector eta = g.normal_vec(map.param_count());
      const Vector w = g.normal_vec(map.param_count()).normalized();
      const double eps = 1e-5;
      auto k = [&](const Vector& t) { return eta.dot(brute_force_metric(map, t, Z) * eta); };
      const double fd = (k(th + eps * w) - k(th - eps * w)) / (2.0 * eps);
      const double got = MetricOperator(map, batch, th).quadratic_grad(eta).dot(w);
      CHECK(std::abs(got - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("minres on small systems") {
  SUBCASE("diagonal example") {
    const Vector d = (Vector(2) << 2, 1).finished();
    const auto r = minres([&](const Vector& x) { return Vector(d.cwiseProduct(x)); },
                          (Vector(2) << 2, 1).finished(), {1e-12, 0});
    CHECK(r.converged);
    CHECK((r.solution - Vector::Ones(2)).norm() < 1e-12);
  }
  SUBCASE("random SPD against a dense solve") {
    Gen g(34);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix B = g.normal_mat(10, 10);
      const Matrix A = B * B.transpose() + 0.1 * Matrix::Identity(10, 10);
      const Vector b = g.normal_vec(10);
      const Vector ref = A.ldlt().solve(b);
      const auto r = minres([&](const Vector& x) { return Vector(A * x); }, b, {1e-12, 100});
      CHECK(r.converged);
      CHECK((r.solution - ref).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("warm start at the solution needs no iterations") {
    const Matrix A = (Matrix(2, 2) << 3, 1, 1, 2).finished();
    const Vector x = (Vector(2) << 1, -1).finished();
    const Vector b = A * x;
    const auto r = minres([&](const Vector& v) { return Vector(A * v); }, b, {1e-10, 0}, &x);
    CHECK(r.converged);
    CHECK(r.iterations == 0);
  }
  SUBCASE("inconsistent singular system stops at the least-squares solution") {
    const Vector d = (Vector(3) << 1, 0.5, 0).finished();
    const Vector b = (Vector(3) << 1, 1, 1).finished();
    const auto r = minres([&](const Vector& x) { return Vector(d.cwiseProduct(x)); }, b, {1e-8, 0});
    CHECK(r.converged);
    CHECK(r.least_squares);
    // Any least-squares solution fits the range part of b; MINRES does not
    // promise the minimum-norm one here, only a bounded iterate.
    CHECK((d.cwiseProduct(r.solution) - (Vector(3) << 1, 1, 0).finished()).norm() < 1e-6);
    CHECK(r.solution.norm() < 10.0);
  }
}

TEST_CASE("pseudo-inverse consistency on a rank-deficient metric") {
  Gen g(35);
  PushForwardMap map(MapDescriptor::resnet(2, 10, 10));
  // Fewer samples than parameters: Ĝ has rank ≤ 2·N.
  const SampleBatch batch = SampleBatch::standard_normal(2, 20, 3);
  const MetricOperator op(map, batch, testing::random_params(map.descriptor(), g));
  for (int trial = 0; trial < 5; ++trial) {
    const Vector p = op.apply(g.normal_vec(map.param_count()));
    const SolveReport r = op.solve(p, {3e-4, 0});
    CHECK(r.converged);
    CHECK((op.apply(r.solution) - p).norm() <= 3e-4 * p.norm() * (1.0 + 1e-9));
  }
}

TEST_CASE("estimators do not depend on the worker count") {
  Gen g(36);
  PushForwardMap map(MapDescriptor::resnet(2, 8, 8));
  const SampleBatch batch = SampleBatch::standard_normal(2, 1500, 9);
  const Vector th = testing::random_params(map.descriptor(), g);
  const Vector eta = g.normal_vec(map.param_count());
  set_worker_count(1);
  const MetricOperator a(map, batch, th);
  const Vector ga = a.apply(eta), qa = a.quadratic_grad(eta);
  set_worker_count(3);
  const MetricOperator b(map, batch, th);
  const Vector gb = b.apply(eta), qb = b.quadratic_grad(eta);
  set_worker_count(0);
  CHECK(ga == gb);
  CHECK(qa == qb);
}
