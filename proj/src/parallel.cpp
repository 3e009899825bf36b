#include "pwhf/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace pwhf {

namespace {

std::atomic<std::size_t> g_override{0};

std::size_t default_workers() {
  static const std::size_t n = [] {
    if (const char* env = std::getenv("PWHF_NUM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }();
  return n;
}

}  // namespace

bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

std::size_t worker_count() {
  const std::size_t o = g_override.load();
  return o > 0 ? o : default_workers();
}

void set_worker_count(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
}

Vector pairwise_sum(std::vector<Vector> parts) {
  if (parts.empty()) return Vector();
  for (std::size_t width = 1; width < parts.size(); width *= 2) {
    for (std::size_t i = 0; i + width < parts.size(); i += 2 * width) {
      parts[i] += parts[i + width];
    }
  }
  return std::move(parts.front());
}

double pairwise_sum(std::vector<double> parts) {
  if (parts.empty()) return 0.0;
  for (std::size_t width = 1; width < parts.size(); width *= 2) {
    for (std::size_t i = 0; i + width < parts.size(); i += 2 * width) {
      parts[i] += parts[i + width];
    }
  }
  return parts.front();
}

}  // namespace pwhf
