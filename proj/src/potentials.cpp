#include "pwhf/potentials.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "pwhf/parallel.hpp"

namespace pwhf {

std::string_view to_string(PotentialKind kind) {
  switch (kind) {
    case PotentialKind::zero: return "zero";
    case PotentialKind::quadratic: return "quadratic";
    case PotentialKind::generic_linear: return "generic_linear";
    case PotentialKind::interaction: return "interaction";
    case PotentialKind::entropy_diagonal: return "entropy_diagonal";
    case PotentialKind::entropy_affine: return "entropy_affine";
  }
  return "?";
}

PotentialKind parse_potential_kind(std::string_view name) {
  for (auto k : {PotentialKind::zero, PotentialKind::quadratic, PotentialKind::generic_linear,
                 PotentialKind::interaction, PotentialKind::entropy_diagonal,
                 PotentialKind::entropy_affine}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown potential kind '" + std::string(name) + "'");
}

PotentialSpec PotentialSpec::zero() { return {}; }

PotentialSpec PotentialSpec::quadratic(Vector a) {
  PotentialSpec s;
  s.kind = PotentialKind::quadratic;
  s.coefficients = std::move(a);
  return s;
}

PotentialSpec PotentialSpec::generic_linear(ScalarField v, VectorField grad_v) {
  PotentialSpec s;
  s.kind = PotentialKind::generic_linear;
  s.V = std::move(v);
  s.grad_V = std::move(grad_v);
  return s;
}

PotentialSpec PotentialSpec::interaction(double b) {
  PotentialSpec s;
  s.kind = PotentialKind::interaction;
  s.softening = b;
  return s;
}

PotentialSpec PotentialSpec::entropy_diagonal() {
  PotentialSpec s;
  s.kind = PotentialKind::entropy_diagonal;
  return s;
}

PotentialSpec PotentialSpec::entropy_affine() {
  PotentialSpec s;
  s.kind = PotentialKind::entropy_affine;
  return s;
}

bool PotentialSpec::has_field() const {
  return kind != PotentialKind::entropy_diagonal && kind != PotentialKind::entropy_affine;
}

void PotentialSpec::validate(const MapDescriptor& map) const {
  switch (kind) {
    case PotentialKind::zero: break;
    case PotentialKind::quadratic:
      require_size(coefficients.size(), map.dim, "quadratic coefficients");
      if (!coefficients.allFinite()) throw ConfigError("quadratic coefficients must be finite");
      break;
    case PotentialKind::generic_linear:
      if (!V || !grad_V) throw ConfigError("generic linear potential needs V and grad V");
      break;
    case PotentialKind::interaction:
      if (!(softening > 0.0)) throw ConfigError("interaction softening b must be positive");
      break;
    case PotentialKind::entropy_diagonal:
      if (map.kind != MapKind::diagonal)
        throw ConfigError("entropy_diagonal requires a diagonal map");
      break;
    case PotentialKind::entropy_affine:
      if (map.kind != MapKind::affine) throw ConfigError("entropy_affine requires an affine map");
      break;
  }
}

namespace potentials {

namespace {

constexpr Eigen::Index kRowChunk = 64;

// Per-row interaction sums over j ≠ i. Rows are processed in fixed chunks so
// the result does not depend on the worker count. Coordinates are stored one
// contiguous array per axis so the inner j loop vectorizes.
struct PairSums {
  Matrix field;     // Σ_{j≠i} ∇_x C_b(x_i, x_j), d × N
  double kernel;    // Σ_{i≠j} C_b(x_i, x_j)
};

PairSums interaction_sums(const Eigen::Ref<const Matrix>& x, double b, bool want_field) {
  const Eigen::Index d = x.rows(), n = x.cols();
  const RowMatrix coords = x;  // d × N, row k contiguous
  PairSums out;
  if (want_field) out.field = Matrix::Zero(d, n);
  const Eigen::Index nchunks = (n + kRowChunk - 1) / kRowChunk;
  std::vector<double> chunk_kernel(static_cast<std::size_t>(nchunks), 0.0);

  parallel_for(static_cast<std::size_t>(nchunks), [&](std::size_t c) {
    std::vector<double> r2(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    std::vector<double> row_kernel;
    const Eigen::Index lo = static_cast<Eigen::Index>(c) * kRowChunk;
    const Eigen::Index hi = std::min(n, lo + kRowChunk);
    for (Eigen::Index i = lo; i < hi; ++i) {
      std::fill(r2.begin(), r2.end(), 0.0);
      for (Eigen::Index k = 0; k < d; ++k) {
        const double* ck = coords.row(k).data();
        const double xi = ck[i];
        for (Eigen::Index j = 0; j < n; ++j) {
          const double diff = xi - ck[j];
          r2[static_cast<std::size_t>(j)] += diff * diff;
        }
      }
      double ks = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double inv = 1.0 / (b + r2[static_cast<std::size_t>(j)]);
        w[static_cast<std::size_t>(j)] = inv * inv;
        if (j != i) ks += inv;
      }
      row_kernel.push_back(ks);
      if (want_field) {
        // ∇_x C_b(x, y) = −2 (x − y) / (b + |x − y|²)²; the j = i term is exactly zero.
        for (Eigen::Index k = 0; k < d; ++k) {
          const double* ck = coords.row(k).data();
          const double xi = ck[i];
          double acc = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) acc += (xi - ck[j]) * w[static_cast<std::size_t>(j)];
          out.field(k, i) = -2.0 * acc;
        }
      }
    }
    chunk_kernel[c] = pairwise_sum(std::move(row_kernel));
  });
  out.kernel = pairwise_sum(std::move(chunk_kernel));
  return out;
}

// Σ_i v_i summed column-chunk-wise with the fixed tree.
double column_sum(const Eigen::Ref<const Vector>& v) {
  const Eigen::Index n = v.size();
  std::vector<double> parts;
  for (Eigen::Index off = 0; off < n; off += LinearizedBatch::kChunk)
    parts.push_back(v.segment(off, std::min(LinearizedBatch::kChunk, n - off)).sum());
  return pairwise_sum(std::move(parts));
}

void check_diagonal(const ParamVector& theta) {
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    if (!(theta[k] > 0.0)) throw DomainError("entropy_diagonal: scale D_k must be positive");
}

}  // namespace

double ensemble_value(const PotentialSpec& spec, const Eigen::Ref<const Matrix>& x) {
  const Eigen::Index n = x.cols();
  if (n < 1) throw DimensionError("potential: empty ensemble");
  switch (spec.kind) {
    case PotentialKind::zero: return 0.0;
    case PotentialKind::quadratic: {
      require_size(spec.coefficients.size(), x.rows(), "quadratic coefficients");
      const Vector per = 0.5 * (spec.coefficients.asDiagonal() * x.cwiseAbs2()).colwise().sum().transpose();
      return column_sum(per) / static_cast<double>(n);
    }
    case PotentialKind::generic_linear: {
      Vector per(n);
      for (Eigen::Index i = 0; i < n; ++i) per[i] = spec.V(x.col(i));
      return column_sum(per) / static_cast<double>(n);
    }
    case PotentialKind::interaction: {
      if (n < 2) throw DimensionError("interaction estimator needs at least two samples");
      const auto s = interaction_sums(x, spec.softening, false);
      return s.kernel / (static_cast<double>(n) * static_cast<double>(n - 1));
    }
    case PotentialKind::entropy_diagonal:
    case PotentialKind::entropy_affine:
      throw ConfigError("entropy potentials are evaluated from θ, not from samples");
  }
  return 0.0;
}

Matrix field(const PotentialSpec& spec, const Eigen::Ref<const Matrix>& x) {
  const Eigen::Index d = x.rows(), n = x.cols();
  switch (spec.kind) {
    case PotentialKind::zero: return Matrix::Zero(d, n);
    case PotentialKind::quadratic:
      require_size(spec.coefficients.size(), d, "quadratic coefficients");
      return spec.coefficients.asDiagonal() * x;
    case PotentialKind::generic_linear: {
      Matrix g(d, n);
      for (Eigen::Index i = 0; i < n; ++i) g.col(i) = spec.grad_V(x.col(i));
      return g;
    }
    case PotentialKind::interaction: {
      if (n < 2) throw DimensionError("interaction estimator needs at least two samples");
      auto s = interaction_sums(x, spec.softening, true);
      return s.field * (2.0 / static_cast<double>(n - 1));
    }
    case PotentialKind::entropy_diagonal:
    case PotentialKind::entropy_affine:
      throw ConfigError("entropy potentials have no pointwise driving field here");
  }
  return {};
}

double value(const PotentialSpec& spec, const PushForwardMap& map, const ParamVector& theta,
             const SampleBatch& batch) {
  spec.validate(map.descriptor());
  map.check_params(theta);
  const double d = static_cast<double>(map.dim());
  switch (spec.kind) {
    case PotentialKind::zero: return 0.0;
    case PotentialKind::entropy_diagonal: {
      check_diagonal(theta);
      return -0.5 * d * std::log(2.0 * std::numbers::pi) - theta.array().log().sum() - 0.5 * d;
    }
    case PotentialKind::entropy_affine: {
      const auto dim = map.dim();
      const Matrix gamma = Eigen::Map<const RowMatrix>(theta.data(), dim, dim);
      const double det = gamma.determinant();
      if (!(std::abs(det) > 0.0) || !std::isfinite(det))
        throw DomainError("entropy_affine: Γ is singular");
      return -0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e) - std::log(std::abs(det));
    }
    default:
      return ensemble_value(spec, map.forward_batch(theta, batch.points));
  }
}

Vector grad(const PotentialSpec& spec, const LinearizedBatch& lin) {
  if (spec.kind == PotentialKind::zero) return Vector::Zero(lin.param_count());
  return lin.vjp_mean(field(spec, lin.pushed()));
}

Vector grad(const PotentialSpec& spec, const PushForwardMap& map, const ParamVector& theta,
            const SampleBatch& batch) {
  spec.validate(map.descriptor());
  map.check_params(theta);
  switch (spec.kind) {
    case PotentialKind::zero: return Vector::Zero(map.param_count());
    case PotentialKind::entropy_diagonal:
      check_diagonal(theta);
      return -theta.cwiseInverse();
    case PotentialKind::entropy_affine: {
      const auto dim = map.dim();
      const Matrix gamma = Eigen::Map<const RowMatrix>(theta.data(), dim, dim);
      const Eigen::FullPivLU<Matrix> lu(gamma);
      if (!lu.isInvertible()) throw DomainError("entropy_affine: Γ is singular");
      Vector g = Vector::Zero(map.param_count());
      Eigen::Map<RowMatrix>(g.data(), dim, dim) = -lu.inverse().transpose();
      return g;
    }
    default: {
      const LinearizedBatch lin(map, batch, theta);
      return grad(spec, lin);
    }
  }
}

PotentialReport evaluate(const PotentialSpec& spec, const LinearizedBatch& lin) {
  if (!spec.has_field()) throw ConfigError("evaluate(lin): potential has no pointwise field");
  PotentialReport r;
  r.n_used = lin.size();
  if (spec.kind == PotentialKind::zero) {
    r.grad = Vector::Zero(lin.param_count());
    return r;
  }
  const Matrix x = lin.pushed();
  Matrix g;
  if (spec.kind == PotentialKind::interaction) {
    const Eigen::Index n = x.cols();
    if (n < 2) throw DimensionError("interaction estimator needs at least two samples");
    auto s = interaction_sums(x, spec.softening, true);
    r.value = s.kernel / (static_cast<double>(n) * static_cast<double>(n - 1));
    g = s.field * (2.0 / static_cast<double>(n - 1));
  } else {
    r.value = ensemble_value(spec, x);
    g = field(spec, x);
  }
  r.grad = lin.vjp_mean(g);
  if (!std::isfinite(r.value) || !r.grad.allFinite())
    throw DomainError("potential estimate is not finite");
  return r;
}

PotentialReport evaluate(const PotentialSpec& spec, const PushForwardMap& map,
                         const ParamVector& theta, const SampleBatch& batch) {
  PotentialReport r;
  r.value = value(spec, map, theta, batch);
  r.grad = grad(spec, map, theta, batch);
  r.n_used = batch.size();
  if (!std::isfinite(r.value) || !r.grad.allFinite())
    throw DomainError("potential estimate is not finite");
  return r;
}

}  // namespace potentials
}  // namespace pwhf
