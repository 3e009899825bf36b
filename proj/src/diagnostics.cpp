#include "pwhf/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pwhf/parallel.hpp"

namespace pwhf::diagnostics {

namespace {

double mean_of_columns(const Eigen::Ref<const Vector>& per_sample) {
  std::vector<double> parts(static_cast<std::size_t>(per_sample.size()));
  for (Eigen::Index i = 0; i < per_sample.size(); ++i) parts[static_cast<std::size_t>(i)] = per_sample[i];
  return pairwise_sum(std::move(parts)) / static_cast<double>(per_sample.size());
}

}  // namespace

EnergyReport energy(const MetricOperator& op, const Vector& p, const PotentialSpec& potential,
                    const SampleBatch& potential_batch, const SolveOptions& opts) {
  EnergyReport r;
  const SolveReport s = op.solve(p, opts);
  r.converged = s.converged;
  r.kinetic = 0.5 * p.dot(s.solution);
  r.potential = potentials::value(potential, op.map(), op.theta(), potential_batch);
  r.hamiltonian = r.kinetic + r.potential;
  return r;
}

DeltaReport delta_theta(const MetricOperator& op, const PotentialSpec& potential,
                        const SolveOptions& opts) {
  if (!potential.has_field())
    throw ConfigError("delta(theta) needs a potential with a pointwise field");
  DeltaReport r;
  if (potential.kind == PotentialKind::zero) return r;

  const LinearizedBatch& lin = op.linearization();
  const Matrix g = potentials::field(potential, lin.pushed());
  const Vector grad_f = lin.vjp_mean(g);
  const SolveReport s = op.solve(grad_f, opts);
  r.converged = s.converged;
  const Matrix resid = g - lin.jvp_all(s.solution);
  r.value = mean_of_columns(resid.colwise().squaredNorm().transpose());
  return r;
}

ErrorReport traj_error(const PushForwardMap& map, const std::vector<ParamVector>& thetas,
                       const std::vector<double>& times, const SampleBatch& eval,
                       const ParticleOracle& oracle) {
  if (thetas.size() != times.size()) throw DimensionError("traj_error: thetas and times differ in length");
  ErrorReport out;
  if (thetas.empty()) return out;
  const Matrix x0 = map.forward_batch(thetas.front(), eval.points);
  const Eigen::Index n = x0.cols();
  for (std::size_t l = 0; l < thetas.size(); ++l) {
    const Matrix x = map.forward_batch(thetas[l], eval.points);
    Vector err(n), sq(n), ref(n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
      const auto c = static_cast<Eigen::Index>(i);
      const Vector target = oracle(x0.col(c), times[l]);
      sq[c] = (x.col(c) - target).squaredNorm();
      err[c] = std::sqrt(sq[c]);
      ref[c] = target.squaredNorm();
    });
    ErrorRow row{times[l], mean_of_columns(err), mean_of_columns(sq), mean_of_columns(ref)};
    out.eps_hat = std::max(out.eps_hat, row.mean_error);
    out.per_time.push_back(row);
  }
  return out;
}

std::vector<double> freedman_diaconis_edges(std::vector<double> values) {
  if (values.empty()) throw ConfigError("histogram of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  const double lo = values.front(), hi = values.back();
  const double iqr = quantile(0.75) - quantile(0.25);
  if (!(iqr > 0.0) || !(hi > lo)) return {lo - 0.5, lo + 0.5};
  const double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
  const auto bins = std::clamp<long>(static_cast<long>(std::ceil((hi - lo) / width)), 1, 1000);
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (long k = 0; k <= bins; ++k)
    edges[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  edges.back() = hi;  // lo + (hi − lo) can round below hi
  return edges;
}

Histogram hist_projection(const Eigen::Ref<const Matrix>& snapshot, Eigen::Index axis,
                          const std::vector<double>& edges, const std::optional<QuadraticSpec>& oracle,
                          double t) {
  if (snapshot.cols() == 0) throw ConfigError("histogram of an empty snapshot");
  if (axis < 0 || axis >= snapshot.rows()) throw DimensionError("histogram axis out of range");
  if (edges.size() < 2) throw ConfigError("histogram needs at least two bin edges");
  for (std::size_t k = 1; k < edges.size(); ++k)
    if (!(edges[k] > edges[k - 1])) throw ConfigError("histogram bin edges must be increasing");

  Histogram h;
  h.edges = edges;
  const std::size_t bins = edges.size() - 1;
  h.counts.assign(bins, 0.0);
  for (Eigen::Index i = 0; i < snapshot.cols(); ++i) {
    const double x = snapshot(axis, i);
    if (x < edges.front() || x > edges.back()) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    auto k = static_cast<std::size_t>(std::distance(edges.begin(), it)) - 1;
    h.counts[std::min(k, bins - 1)] += 1.0;
  }
  const auto n = static_cast<double>(snapshot.cols());
  h.density.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) h.density[k] = h.counts[k] / (n * (edges[k + 1] - edges[k]));

  if (oracle) {
    oracle->validate();
    require_size(oracle->a.size(), snapshot.rows(), "histogram oracle dimension");
    const double a = oracle->a[axis], b = oracle->b[axis];
    const double c = std::cos(std::sqrt(a) * t - std::atan(b));
    const double var = (1.0 + b * b) * c * c;
    h.oracle_variance = var;
    if (var < 1e-12) {
      h.point_mass = true;
    } else {
      h.oracle_density.resize(bins);
      for (std::size_t k = 0; k < bins; ++k) {
        const double x = 0.5 * (edges[k] + edges[k + 1]);
        h.oracle_density[k] = std::exp(-0.5 * x * x / var) / std::sqrt(2.0 * std::numbers::pi * var);
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Finite-difference checks

namespace {

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  Vector normal(Eigen::Index n) {
    std::normal_distribution<double> nd;
    Vector v(n);
    for (auto& x : v) x = nd(gen);
    return v;
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
};

// A θ away from the identity so that every derivative term is exercised.
ParamVector random_theta(const MapDescriptor& desc, Rng& rng) {
  const Eigen::Index d = desc.dim;
  switch (desc.kind) {
    case MapKind::diagonal: {
      Vector th(d);
      for (auto& x : th) x = rng.uniform(0.5, 2.0);
      return th;
    }
    case MapKind::affine: {
      Vector th = rng.normal(desc.param_count()) * 0.5;
      for (Eigen::Index k = 0; k < d; ++k) th[k * d + k] += 1.0;
      return th;
    }
    case MapKind::resnet: {
      const ResNetLayout L(desc);
      Vector th(L.size);
      th.segment(L.w1, L.h1 * L.d) = rng.normal(L.h1 * L.d) / std::sqrt(static_cast<double>(L.d));
      th.segment(L.b1, L.h1) = rng.normal(L.h1) * 0.3;
      th.segment(L.w2, L.h2 * L.h1) = rng.normal(L.h2 * L.h1) / std::sqrt(static_cast<double>(L.h1));
      th.segment(L.b2, L.h2) = rng.normal(L.h2) * 0.3;
      th.segment(L.w3, L.d * L.h2) = rng.normal(L.d * L.h2) / std::sqrt(static_cast<double>(L.h2));
      return th;
    }
  }
  return {};
}

double rel(double err, double scale) { return scale > 0.0 ? err / scale : err; }

// Central difference of f along a direction w, taken on the unit direction
// and rescaled so the step size does not depend on |w|.
template <class F>
auto central_diff(const F& f, const ParamVector& theta, const Vector& w) {
  const double wn = w.norm();
  const double eps = 1e-4 * (1.0 + theta.norm());
  const Vector step = (eps / wn) * w;
  return ((f(theta + step) - f(theta - step)) / (2.0 * eps) * wn).eval();
}

}  // namespace

std::vector<DerivativeCheck> check_derivatives(const MapDescriptor& desc,
                                               const DerivativeCheckOptions& opts) {
  desc.validate();
  const PushForwardMap map(desc);
  const Eigen::Index d = desc.dim, m = desc.param_count();
  Rng rng(opts.seed);
  const bool linear_family = desc.kind != MapKind::resnet;

  DerivativeCheck jvp_c{"jvp_fd", 0.0, opts.fd_tol};
  DerivativeCheck vjp_c{"vjp_fd", 0.0, opts.fd_tol};
  DerivativeCheck adj_c{"adjoint", 0.0, opts.adjoint_tol};
  DerivativeCheck sq_c{linear_family ? "jvp_sq_grad_zero" : "jvp_sq_grad_fd", 0.0, opts.fd_tol};
  DerivativeCheck qg_c{"metric_quadratic_grad_fd", 0.0, opts.fd_tol};
  DerivativeCheck pg_c{"potential_grad_fd", 0.0, opts.fd_tol};

  const Eigen::Index small_n = 8;
  for (int trial = 0; trial < opts.trials; ++trial) {
    const ParamVector theta = random_theta(desc, rng);
    const Vector z = rng.normal(d);
    const Vector v = rng.normal(m);
    const Vector u = rng.normal(d);
    const Vector w = rng.normal(m);

    Vector jv = map.jvp(theta, z, v);
    jv.array() += opts.perturb;
    const Vector jtu = map.vjp(theta, z, u);

    auto T = [&](const ParamVector& th) { return map.forward(th, z); };
    const Vector fd_jv = central_diff(T, theta, v);
    jvp_c.max_error = std::max(jvp_c.max_error, rel((jv - fd_jv).norm(), fd_jv.norm()));

    const Vector fd_jw = central_diff(T, theta, w);
    vjp_c.max_error = std::max(
        vjp_c.max_error, rel(std::abs(jtu.dot(w) - u.dot(fd_jw)), u.norm() * fd_jw.norm()));

    adj_c.max_error = std::max(adj_c.max_error, rel(std::abs(jv.dot(u) - v.dot(jtu)),
                                                    std::max(jv.norm() * u.norm(), v.norm() * jtu.norm())));

    const Vector sq = map.jvp_sq_grad(theta, z, v);
    if (linear_family) {
      sq_c.max_error = std::max(sq_c.max_error, sq.cwiseAbs().maxCoeff());
    } else {
      auto g = [&](const ParamVector& th) {
        Vector s(1);
        s[0] = 0.5 * map.jvp(th, z, v).squaredNorm();
        return s;
      };
      const double fd = central_diff(g, theta, w)[0];
      sq_c.max_error = std::max(sq_c.max_error, rel(std::abs(sq.dot(w) - fd), sq.norm() * w.norm()));
    }

    // Batch-level quantities on a small frozen batch.
    const SampleBatch batch = SampleBatch::standard_normal(d, small_n, opts.seed + 1000 + static_cast<std::uint64_t>(trial));
    const MetricOperator op(map, batch, theta);
    const Vector qg = op.quadratic_grad(v);
    auto kq = [&](const ParamVector& th) {
      Vector s(1);
      s[0] = v.dot(MetricOperator(map, batch, th).apply(v));
      return s;
    };
    const double fd_k = central_diff(kq, theta, w)[0];
    const double qscale = std::max(qg.norm() * w.norm(), 1e-12 * v.squaredNorm());
    qg_c.max_error = std::max(qg_c.max_error, rel(std::abs(qg.dot(w) - fd_k), linear_family ? std::max(qscale, 1.0) : qscale));

    Vector a(d);
    for (auto& x : a) x = rng.uniform(0.2, 3.0);
    const auto spec = trial % 2 == 0 ? PotentialSpec::quadratic(a) : PotentialSpec::interaction(0.1);
    const Vector pg = potentials::grad(spec, map, theta, batch);
    auto fv = [&](const ParamVector& th) {
      Vector s(1);
      s[0] = potentials::value(spec, map, th, batch);
      return s;
    };
    const double fd_f = central_diff(fv, theta, w)[0];
    pg_c.max_error = std::max(pg_c.max_error, rel(std::abs(pg.dot(w) - fd_f), pg.norm() * w.norm()));
  }

  std::vector<DerivativeCheck> out{jvp_c, vjp_c, adj_c, sq_c, qg_c, pg_c};
  for (auto& c : out) c.passed = c.max_error < c.threshold;
  return out;
}

}  // namespace pwhf::diagnostics
