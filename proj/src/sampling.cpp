#include "pwhf/sampling.hpp"

#include <random>

namespace pwhf {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SampleBatch SampleBatch::standard_normal(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  if (d < 1 || n < 1) throw DimensionError("SampleBatch: need d >= 1 and N >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SampleBatch b;
  b.points.resize(d, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) b.points(k, i) = normal(rng);
  b.seed = seed;
  return b;
}

SampleBatch SampleBatch::moment_matched_normal(Eigen::Index d, Eigen::Index n,
                                               std::uint64_t seed) {
  if (d < 1 || n < 2 * d) throw DimensionError("moment-matched batch needs N >= 2d");
  const Eigen::Index half = n / 2;
  SampleBatch b = standard_normal(d, half, seed);
  Matrix pts = Matrix::Zero(d, n);  // odd n keeps one point at the origin
  for (Eigen::Index i = 0; i < half; ++i) {
    pts.col(2 * i) = b.points.col(i);
    pts.col(2 * i + 1) = -b.points.col(i);
  }
  const Matrix second = pts * pts.transpose() / static_cast<double>(n);
  const Eigen::LLT<Matrix> llt(second);
  if (llt.info() != Eigen::Success) throw DomainError("moment-matched batch: degenerate draws");
  pts = llt.matrixL().solve(pts);
  b.points = std::move(pts);
  b.moment_matched = true;
  return b;
}

SampleBatch SampleBatch::from_points(Matrix pts, std::uint64_t seed) {
  if (pts.rows() < 1 || pts.cols() < 1) throw DimensionError("SampleBatch: empty point set");
  SampleBatch b;
  b.points = std::move(pts);
  b.seed = seed;
  return b;
}

}  // namespace pwhf
