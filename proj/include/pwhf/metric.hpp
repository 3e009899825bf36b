#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pwhf/maps.hpp"
#include "pwhf/sampling.hpp"

namespace pwhf {

struct SolveReport {
  Vector solution;
  double residual_norm = 0.0;  // |Aξ − p| recomputed after the iteration
  Eigen::Index iterations = 0;
  bool converged = false;
  bool stagnated = false;  // residual stopped decreasing before reaching tol
  // p is not in the range of A to tolerance; the solution minimizes |Aξ − p|
  // instead (|A r| ≤ tol·|A|·|r|). Counted as converged.
  bool least_squares = false;
};

struct SolveOptions {
  double tol = 3e-4;           // relative: stop once |Aξ − p| ≤ tol·|p|
  Eigen::Index max_iter = 0;   // 0 selects 2·m
};

using LinearOperator = std::function<Vector(const Vector&)>;

/// MINRES (Paige–Saunders) for a symmetric, possibly singular operator.
/// With a right-hand side in the range of A it converges to a solution of
/// the consistent system; started from zero this is the minimum-norm one.
SolveReport minres(const LinearOperator& apply, const Vector& rhs, const SolveOptions& opts,
                   const Vector* warm_start = nullptr);

/// Monte-Carlo estimate of the simplified metric
///   Ĝ(θ) = (1/N) Σ_i ∂_θT_θ(z_i)ᵀ ∂_θT_θ(z_i)
/// over a frozen batch, applied matrix-free. Immutable after construction.
class MetricOperator {
 public:
  MetricOperator(const PushForwardMap& map, const SampleBatch& batch, ParamVector theta);

  Eigen::Index param_count() const { return theta_.size(); }
  Eigen::Index sample_count() const { return lin_.size(); }
  const ParamVector& theta() const { return theta_; }
  const PushForwardMap& map() const { return *map_; }
  const SampleBatch& batch() const { return *batch_; }
  const LinearizedBatch& linearization() const { return lin_; }

  /// Ĝ(θ)·η.
  Vector apply(const Vector& eta) const;

  /// [ηᵀ (∂_{θ_k} Ĝ) η]_k = (2/N) Σ_i ∇_θ ½|∂_θT_θ(z_i)·η|².
  Vector quadratic_grad(const Vector& eta) const;

  /// MINRES on Ĝξ = p.
  SolveReport solve(const Vector& p, const SolveOptions& opts,
                    const Vector* warm_start = nullptr) const;

 private:
  const PushForwardMap* map_;
  const SampleBatch* batch_;
  ParamVector theta_;
  LinearizedBatch lin_;
};

}  // namespace pwhf
