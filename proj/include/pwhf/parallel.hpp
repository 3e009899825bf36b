#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pwhf/common.hpp"

namespace pwhf {

/// Number of worker threads used by the sample-parallel estimators.
/// Reads PWHF_NUM_THREADS once; defaults to the hardware concurrency.
std::size_t worker_count();

/// Override for tests; 0 restores the environment/hardware default.
void set_worker_count(std::size_t n);

/// Runs fn(i) for i in [0, n). Work is distributed across worker_count()
/// threads; fn must only write to slots owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Sums equally sized vectors with a fixed pairwise tree. The tree depends
/// only on parts.size(), so the result is bit-identical for any worker count.
Vector pairwise_sum(std::vector<Vector> parts);

/// Scalar variant of pairwise_sum.
double pairwise_sum(std::vector<double> parts);

}  // namespace pwhf
