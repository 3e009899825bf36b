#pragma once

#include <random>

#include "pwhf/maps.hpp"

namespace testing {

using pwhf::Matrix;
using pwhf::Vector;

struct Gen {
  std::mt19937_64 eng;
  explicit Gen(std::uint64_t seed) : eng(seed) {}
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  Vector normal_vec(Eigen::Index n, double scale = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * normal();
    return v;
  }
  Matrix normal_mat(Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) m.col(j) = normal_vec(r);
    return m;
  }
};

// O(1) resnet weights so every layer contributes to the derivatives.
inline Vector random_params(const pwhf::MapDescriptor& desc, Gen& g) {
  const Eigen::Index m = desc.param_count();
  if (desc.kind == pwhf::MapKind::diagonal) {
    Vector v(m);
    for (Eigen::Index i = 0; i < m; ++i) v[i] = g.uniform(0.5, 2.0);
    return v;
  }
  return g.normal_vec(m, desc.kind == pwhf::MapKind::resnet ? 0.5 : 1.0);
}

// ∂_θT_θ(z) by central differences, d × m.
inline Matrix fd_jacobian(const pwhf::PushForwardMap& map, const Vector& theta, const Vector& z,
                          double eps = 1e-6) {
  Matrix J(map.dim(), map.param_count());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Vector tp = theta, tm = theta;
    tp[k] += eps;
    tm[k] -= eps;
    J.col(k) = (map.forward(tp, z) - map.forward(tm, z)) / (2.0 * eps);
  }
  return J;
}

// Exact Jacobian from m unit-vector jvp calls.
inline Matrix jvp_jacobian(const pwhf::PushForwardMap& map, const Vector& theta, const Vector& z) {
  Matrix J(map.dim(), map.param_count());
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    J.col(k) = map.jvp(theta, z, Vector::Unit(theta.size(), k));
  return J;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing
