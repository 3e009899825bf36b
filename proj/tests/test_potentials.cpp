#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "pwhf/potentials.hpp"
#include "support.hpp"

using namespace pwhf;
using testing::Gen;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Vector fd_grad(const PotentialSpec& spec, const PushForwardMap& map, const Vector& th,
               const SampleBatch& batch, double eps = 1e-6) {
  Vector g(th.size());
  for (Eigen::Index k = 0; k < th.size(); ++k) {
    Vector tp = th, tm = th;
    tp[k] += eps;
    tm[k] -= eps;
    g[k] = (potentials::value(spec, map, tp, batch) - potentials::value(spec, map, tm, batch)) /
           (2.0 * eps);
  }
  return g;
}

}  // namespace

TEST_CASE("value examples") {
  PushForwardMap aff(MapDescriptor::affine(2));
  const Vector id = aff.init_identity(1);
  const SampleBatch mm = SampleBatch::moment_matched_normal(2, 1000, 3);
  CHECK(potentials::value(PotentialSpec::zero(), aff, id, mm) == 0.0);
  CHECK(potentials::value(PotentialSpec::quadratic(v2(2.25, 0.36)), aff, id, mm) ==
        doctest::Approx(1.305).epsilon(1e-12));

  Matrix pts(2, 2);
  pts << 0, 1, 0, 0;
  const SampleBatch two = SampleBatch::from_points(pts);
  CHECK(potentials::value(PotentialSpec::interaction(0.1), aff, id, two) ==
        doctest::Approx(1.0 / 1.1).epsilon(1e-14));
}

TEST_CASE("interaction field of two particles") {
  Matrix x(2, 2);
  x << 0, 1, 0, 0;
  const Matrix g = potentials::field(PotentialSpec::interaction(0.1), x);
  // ∇ₓC_b(x₁, x₂) = −2(x₁ − x₂)/(b + |x₁ − x₂|²)² = (2/1.21, 0); the field carries the
  // factor 2/(N − 1) of δℱ/δρ, which is 2 here.
  CHECK(g(0, 0) / 2.0 == doctest::Approx(1.652893).epsilon(1e-6));
  CHECK(g(1, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(-g(0, 0)).epsilon(1e-15));
}

TEST_CASE("entropy closed forms") {
  PushForwardMap dia(MapDescriptor::diagonal(3));
  const SampleBatch batch = SampleBatch::standard_normal(3, 10, 1);
  const Vector ones = Vector::Ones(3);
  CHECK((potentials::grad(PotentialSpec::entropy_diagonal(), dia, ones, batch) + ones).norm() ==
        0.0);
  const Vector D = (Vector(3) << 0.5, 2.0, 3.0).finished();
  const double expect = -1.5 * std::log(2.0 * std::numbers::pi) - D.array().log().sum() - 1.5;
  CHECK(potentials::value(PotentialSpec::entropy_diagonal(), dia, D, batch) ==
        doctest::Approx(expect).epsilon(1e-14));

  CHECK_THROWS_AS(potentials::value(PotentialSpec::entropy_diagonal(), dia,
                                    (Vector(3) << 1, 0, 1).finished(), batch),
                  DomainError);
  PushForwardMap aff(MapDescriptor::affine(2));
  const Vector singular = aff.affine_params((Matrix(2, 2) << 1, 2, 2, 4).finished(), v2(0, 0));
  CHECK_THROWS_AS(potentials::value(PotentialSpec::entropy_affine(), aff, singular,
                                    SampleBatch::standard_normal(2, 4, 1)),
                  DomainError);
}

TEST_CASE("gradients match finite differences of the value") {
  Gen g(41);
  SUBCASE("quadratic and interaction on a resnet") {
    PushForwardMap map(MapDescriptor::resnet(2, 5, 4));
    const SampleBatch batch = SampleBatch::standard_normal(2, 60, 2);
    for (const auto& spec :
         {PotentialSpec::quadratic(v2(2.25, 0.36)), PotentialSpec::interaction(0.1)}) {
      for (int trial = 0; trial < 5; ++trial) {
        const Vector th = testing::random_params(map.descriptor(), g);
        CHECK(testing::rel_err(potentials::grad(spec, map, th, batch),
                               fd_grad(spec, map, th, batch)) < 1e-6);
      }
    }
  }
  SUBCASE("entropy on its map families") {
    const SampleBatch batch = SampleBatch::standard_normal(2, 10, 2);
    PushForwardMap dia(MapDescriptor::diagonal(2));
    PushForwardMap aff(MapDescriptor::affine(2));
    for (int trial = 0; trial < 5; ++trial) {
      const Vector D = testing::random_params(dia.descriptor(), g);
      CHECK(testing::rel_err(potentials::grad(PotentialSpec::entropy_diagonal(), dia, D, batch),
                             fd_grad(PotentialSpec::entropy_diagonal(), dia, D, batch)) < 1e-7);
      Vector th = testing::random_params(aff.descriptor(), g);
      th.head(4) += (Vector(4) << 2, 0, 0, 2).finished();  // keep Γ well away from singular
      CHECK(testing::rel_err(potentials::grad(PotentialSpec::entropy_affine(), aff, th, batch),
                             fd_grad(PotentialSpec::entropy_affine(), aff, th, batch)) < 1e-7);
    }
  }
}

TEST_CASE("interaction energy symmetries") {
  Gen g(42);
  const Matrix x = g.normal_mat(2, 40);
  const PotentialSpec spec = PotentialSpec::interaction(0.1);
  const double base = potentials::ensemble_value(spec, x);
  std::vector<Eigen::Index> perm(40);
  for (int trial = 0; trial < 5; ++trial) {
    for (Eigen::Index i = 0; i < 40; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), g.eng);
    Matrix y(2, 40);
    for (Eigen::Index i = 0; i < 40; ++i) y.col(i) = x.col(perm[static_cast<std::size_t>(i)]);
    CHECK(potentials::ensemble_value(spec, y) == doctest::Approx(base).epsilon(1e-13));
    const Matrix shifted = x.colwise() + g.normal_vec(2, 3.0);
    CHECK(potentials::ensemble_value(spec, shifted) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(PotentialSpec::quadratic(v2(1, 1)).validate(MapDescriptor::affine(3)),
                  DimensionError);
  CHECK_THROWS(PotentialSpec::interaction(0.0).validate(MapDescriptor::affine(2)));
  CHECK_THROWS(PotentialSpec::entropy_diagonal().validate(MapDescriptor::resnet(2)));
}
