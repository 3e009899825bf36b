#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pwhf/common.hpp"
#include "pwhf/sampling.hpp"

namespace pwhf {

enum class MapKind { affine, diagonal, resnet };

std::string_view to_string(MapKind kind);
MapKind parse_map_kind(std::string_view name);

/// Push-forward family T_θ : ℝᵈ → ℝᵈ.
///
/// Parameter layouts (all row-major within a weight block):
///   affine   θ = [Γ (d×d), b (d)]                       T(z) = Γz + b
///   diagonal θ = [D_1 … D_d]                            T(z) = D ∘ z
///   resnet   θ = [W1 (h1×d), b1, W2 (h2×h1), b2, W3 (d×h2)]
///            T(z) = z + W3 tanh(W2 tanh(W1 z + b1) + b2)   (no output bias)
struct MapDescriptor {
  MapKind kind = MapKind::affine;
  Eigen::Index dim = 1;
  std::vector<Eigen::Index> hidden_widths;  // resnet only, exactly two entries

  static MapDescriptor affine(Eigen::Index d);
  static MapDescriptor diagonal(Eigen::Index d);
  static MapDescriptor resnet(Eigen::Index d, Eigen::Index h1, Eigen::Index h2);
  /// Hidden width 50 for d ≤ 2, 80 otherwise.
  static MapDescriptor resnet(Eigen::Index d);

  Eigen::Index param_count() const;
  void validate() const;

  bool operator==(const MapDescriptor&) const = default;
};

/// Offsets of the resnet blocks inside θ.
struct ResNetLayout {
  Eigen::Index d, h1, h2;
  Eigen::Index w1, b1, w2, b2, w3, size;
  explicit ResNetLayout(const MapDescriptor& desc);
};

/// The map linearized at fixed θ over a block of reference samples.
///
/// The forward pass is done once at construction; jvp/vjp reuse the cached
/// activations. Samples are the columns of the block.
class Linearization {
 public:
  Linearization(const MapDescriptor& desc, const ParamVector& theta,
                const Eigen::Ref<const Matrix>& z);

  Eigen::Index size() const { return z_.cols(); }

  /// T_θ(z_i) for every column (d × n).
  const Matrix& outputs() const { return out_; }

  /// Columns ∂_θT_θ(z_i)·v (d × n).
  Matrix jvp(const Eigen::Ref<const Vector>& v) const;

  /// Σ_i ∂_θT_θ(z_i)ᵀ u_i for u given column-wise (d × n).
  Vector vjp_sum(const Eigen::Ref<const Matrix>& u) const;

  /// Σ_i ∇_θ ½|∂_θT_θ(z_i)·v|² with v held fixed. Zero for affine/diagonal maps.
  Vector jvp_sq_grad_sum(const Eigen::Ref<const Vector>& v) const;

 private:
  MapDescriptor desc_;
  ParamVector theta_;
  Matrix z_;
  Matrix out_;
  Matrix h1_, h2_;  // resnet hidden activations
  Matrix s1_, s2_;  // tanh' at the hidden pre-activations
};

class PushForwardMap {
 public:
  explicit PushForwardMap(MapDescriptor desc);

  const MapDescriptor& descriptor() const { return desc_; }
  Eigen::Index dim() const { return desc_.dim; }
  Eigen::Index param_count() const { return m_; }

  Linearization linearize(const ParamVector& theta, const Eigen::Ref<const Matrix>& z) const;

  Vector forward(const ParamVector& theta, const Eigen::Ref<const Vector>& z) const;
  Matrix forward_batch(const ParamVector& theta, const Eigen::Ref<const Matrix>& z) const;
  Vector jvp(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
             const Eigen::Ref<const Vector>& v) const;
  Vector vjp(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
             const Eigen::Ref<const Vector>& u) const;
  Vector jvp_sq_grad(const ParamVector& theta, const Eigen::Ref<const Vector>& z,
                     const Eigen::Ref<const Vector>& v) const;

  /// Identity-map initialization. Affine: Γ = I, b = 0. Diagonal: D = 1.
  /// Resnet: weights ~ U(−s, s) with s = 0.1/√fan_in, biases zero.
  ParamVector init_identity(std::uint64_t seed) const;

  /// Packs an affine (Γ, b) pair into θ. Only valid for affine maps.
  ParamVector affine_params(const Matrix& gamma, const Vector& b) const;

  void check_params(const ParamVector& theta) const;

 private:
  MapDescriptor desc_;
  Eigen::Index m_;
};

/// A whole SampleBatch linearized at θ, split into fixed chunks of kChunk
/// samples. Sums over samples are formed per chunk and combined with a
/// pairwise tree whose shape depends only on N, so results do not depend on
/// the number of worker threads.
class LinearizedBatch {
 public:
  static constexpr Eigen::Index kChunk = 256;

  LinearizedBatch(const PushForwardMap& map, const SampleBatch& batch, const ParamVector& theta);

  Eigen::Index size() const { return n_; }
  Eigen::Index dim() const { return d_; }
  Eigen::Index param_count() const { return m_; }

  /// T_θ(z_i), d × N.
  Matrix pushed() const;
  /// ∂_θT_θ(z_i)·v, d × N.
  Matrix jvp_all(const Eigen::Ref<const Vector>& v) const;
  /// (1/N) Σ_i ∂_θT_θ(z_i)ᵀ u_i with u given d × N.
  Vector vjp_mean(const Eigen::Ref<const Matrix>& u) const;

  /// Σ over chunks of fn(chunk), combined with the fixed pairwise tree.
  Vector chunk_sum(const std::function<Vector(const Linearization&)>& fn) const;

 private:
  Eigen::Index n_, d_, m_;
  std::vector<Linearization> chunks_;
  std::vector<Eigen::Index> offsets_;
};

}  // namespace pwhf
