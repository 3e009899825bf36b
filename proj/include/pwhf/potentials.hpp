#pragma once

#include <functional>
#include <string_view>

#include "pwhf/maps.hpp"
#include "pwhf/sampling.hpp"

namespace pwhf {

enum class PotentialKind {
  zero,
  quadratic,        // V(x) = ½ Σ a_k x_k²
  generic_linear,   // ∫ V ρ for a user-supplied V and ∇V
  interaction,      // ∬ C_b(x, y) ρ(x) ρ(y),  C_b = 1/(b + |x − y|²)
  entropy_diagonal, // ∫ ρ log ρ for the diagonal map family (closed form)
  entropy_affine,   // ∫ ρ log ρ for the affine map family (closed form)
};

std::string_view to_string(PotentialKind kind);
PotentialKind parse_potential_kind(std::string_view name);

/// A potential functional ℱ(ρ) together with its data.
struct PotentialSpec {
  using ScalarField = std::function<double(const Vector&)>;
  using VectorField = std::function<Vector(const Vector&)>;

  PotentialKind kind = PotentialKind::zero;
  Vector coefficients;     // quadratic
  double softening = 0.1;  // interaction
  ScalarField V;           // generic_linear
  VectorField grad_V;      // generic_linear

  static PotentialSpec zero();
  static PotentialSpec quadratic(Vector a);
  static PotentialSpec generic_linear(ScalarField v, VectorField grad_v);
  static PotentialSpec interaction(double b);
  static PotentialSpec entropy_diagonal();
  static PotentialSpec entropy_affine();

  /// True when ∇(δℱ/δρ) can be evaluated pointwise on samples.
  bool has_field() const;

  /// Throws ConfigError/DimensionError when the spec does not fit the map.
  void validate(const MapDescriptor& map) const;
};

struct PotentialReport {
  double value = 0.0;
  Vector grad;
  Eigen::Index n_used = 0;
};

namespace potentials {

/// F(θ) = ℱ(T_θ♯λ) estimated on the batch (closed form for entropy).
double value(const PotentialSpec& spec, const PushForwardMap& map, const ParamVector& theta,
             const SampleBatch& batch);

/// ∇_θF(θ) = E_λ[∂_θT_θ(z)ᵀ ∇(δℱ/δρ)(T_θ(z))] estimated on the batch.
Vector grad(const PotentialSpec& spec, const PushForwardMap& map, const ParamVector& theta,
            const SampleBatch& batch);

PotentialReport evaluate(const PotentialSpec& spec, const PushForwardMap& map,
                         const ParamVector& theta, const SampleBatch& batch);

/// Same as grad for potentials with a pointwise field, reusing an existing
/// linearization of the batch.
Vector grad(const PotentialSpec& spec, const LinearizedBatch& lin);

/// value and grad in one pass over an existing linearization (pointwise-field
/// potentials only).
PotentialReport evaluate(const PotentialSpec& spec, const LinearizedBatch& lin);

/// Energy of an ensemble of points (columns of x). For interaction this is
/// the U-statistic (1/(N(N−1))) Σ_{i≠j} C_b(x_i, x_j).
double ensemble_value(const PotentialSpec& spec, const Eigen::Ref<const Matrix>& x);

/// ∇(δℱ/δρ) at every column of x, the ensemble standing in for ρ. For
/// interaction: g_i = (2/(N−1)) Σ_{j≠i} ∇_x C_b(x_i, x_j).
Matrix field(const PotentialSpec& spec, const Eigen::Ref<const Matrix>& x);

}  // namespace potentials
}  // namespace pwhf
