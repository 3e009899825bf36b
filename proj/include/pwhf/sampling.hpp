#pragma once

#include <cstdint>

#include "pwhf/common.hpp"

namespace pwhf {

/// N draws from the reference distribution λ = N(0, I_d).
///
/// Points are stored column-wise (d × N): column i is the sample z_i. The
/// estimators in metric/potentials split the columns into fixed-size chunks,
/// so storing samples contiguously per point keeps each chunk a plain block.
struct SampleBatch {
  Matrix points;
  std::uint64_t seed = 0;
  bool moment_matched = false;

  Eigen::Index size() const { return points.cols(); }
  Eigen::Index dim() const { return points.rows(); }
  auto point(Eigen::Index i) const { return points.col(i); }

  /// i.i.d. standard normal draws, reproducible from seed.
  static SampleBatch standard_normal(Eigen::Index d, Eigen::Index n, std::uint64_t seed);

  /// Antithetic pairs (z, −z) whitened so the empirical mean is 0 and the
  /// empirical second moment is exactly I_d (to round-off). Needs n ≥ 2d.
  static SampleBatch moment_matched_normal(Eigen::Index d, Eigen::Index n, std::uint64_t seed);

  static SampleBatch from_points(Matrix pts, std::uint64_t seed = 0);
};

/// Derives an independent stream seed (splitmix64) so that e.g. the metric
/// batch and the potential batch of one run never share draws.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pwhf
