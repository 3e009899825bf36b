#include "pwhf/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pwhf {

namespace {

constexpr Eigen::Index kStagnationWindow = 100;
constexpr int kMaxRestarts = 3;

struct MinresPass {
  Eigen::Index iterations = 0;
  bool estimate_converged = false;
  bool least_squares = false;  // |A r| / (|A| |r|) ≤ tol: p has a component outside range(A)
  bool ill_conditioned = false;
  bool stagnated = false;
  double a_norm = 0.0;
};

// One MINRES pass refining x in place. Stops on the recurrence estimate of
// |r|, or on the estimate of |A r| once the system is seen to be
// inconsistent; without the second test the iterates of a singular,
// inconsistent system keep growing along near-null directions.
MinresPass minres_pass(const LinearOperator& A, const Vector& b, Vector& x, double target,
                       double tol, Eigen::Index budget) {
  MinresPass out;
  const double eps = std::numeric_limits<double>::epsilon();
  Vector r1 = b - A(x);
  const double beta1 = r1.norm();
  if (beta1 <= target) {
    out.estimate_converged = true;
    return out;
  }
  Vector y = r1;
  Vector r2 = r1;
  Vector dx = Vector::Zero(b.size());
  Vector w = Vector::Zero(b.size());
  Vector w1, w2 = w;
  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0, tnorm2 = 0.0;
  double gmax = 0.0, gmin = std::numeric_limits<double>::max();
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(std::min<Eigen::Index>(budget, 4096)) + 1);
  history.push_back(phibar);

  for (Eigen::Index itn = 1; itn <= budget; ++itn) {
    const Vector v = y / beta;
    y = A(v);
    if (itn >= 2) y -= (beta / oldb) * r1;
    const double alfa = v.dot(y);
    y -= (alfa / beta) * r2;
    r1 = std::move(r2);
    r2 = y;
    oldb = beta;
    beta = y.norm();
    tnorm2 += alfa * alfa + oldb * oldb + beta * beta;

    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    const double root = std::hypot(gbar, dbar);
    const double gamma = std::max(std::hypot(gbar, beta), eps);
    const double a_norm = std::sqrt(tnorm2);
    out.a_norm = a_norm;
    // root is |A r| of the previous iterate: once it is negligible that iterate
    // already minimizes |Ax − b|, and the step about to be taken would divide
    // by a vanishing gamma. Same for a collapsing condition estimate.
    if (a_norm > 0.0 && root / a_norm <= tol) {
      out.least_squares = true;
      break;
    }
    if (std::max(gmax, gamma) / std::min(gmin, gamma) >= 0.1 / eps) {
      out.ill_conditioned = true;
      break;
    }
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    gmax = std::max(gmax, gamma);
    gmin = std::min(gmin, gamma);

    w1 = std::move(w2);
    w2 = std::move(w);
    w = (v - oldeps * w1 - delta * w2) / gamma;
    dx += phi * w;
    out.iterations = itn;
    history.push_back(phibar);

    if (phibar <= target) {
      out.estimate_converged = true;
      break;
    }
    if (beta <= eps * beta1) break;  // Krylov space exhausted
    if (itn >= kStagnationWindow &&
        phibar > (1.0 - 1e-6) * history[static_cast<std::size_t>(itn - kStagnationWindow)]) {
      out.stagnated = true;
      break;
    }
  }
  x += dx;
  return out;
}

}  // namespace

SolveReport minres(const LinearOperator& apply, const Vector& rhs, const SolveOptions& opts,
                   const Vector* warm_start) {
  if (!(opts.tol > 0.0)) throw ConfigError("MINRES tolerance must be positive");
  const Eigen::Index n = rhs.size();
  const Eigen::Index max_iter = opts.max_iter > 0 ? opts.max_iter : 2 * n;
  SolveReport rep;
  rep.solution = Vector::Zero(n);
  if (warm_start) {
    require_size(warm_start->size(), n, "MINRES warm start");
    if (warm_start->allFinite()) rep.solution = *warm_start;
  }
  const double target = opts.tol * rhs.norm();

  // The recurrence estimate can drift from the true residual on badly
  // conditioned operators; restart from the current iterate when it does.
  for (int pass = 0; pass <= kMaxRestarts; ++pass) {
    const Eigen::Index budget = max_iter - rep.iterations;
    if (budget <= 0 && pass > 0) break;
    const MinresPass mp =
        minres_pass(apply, rhs, rep.solution, target, opts.tol, std::max<Eigen::Index>(budget, 0));
    rep.iterations += mp.iterations;
    const Vector r = rhs - apply(rep.solution);
    rep.residual_norm = r.norm();
    rep.stagnated = mp.stagnated;
    rep.converged = rep.residual_norm <= target;
    if (!rep.converged && mp.least_squares) {
      // Accept a least-squares solution once the true |A r| confirms it.
      const double ar = apply(r).norm();
      rep.least_squares = ar <= opts.tol * mp.a_norm * rep.residual_norm;
      rep.converged = rep.least_squares;
      if (rep.converged) break;
      continue;
    }
    if (rep.converged || !mp.estimate_converged || mp.iterations == 0) break;
  }
  return rep;
}
// ---------------------------------------------------------------------------

MetricOperator::MetricOperator(const PushForwardMap& map, const SampleBatch& batch,
                               ParamVector theta)
    : map_(&map), batch_(&batch), theta_(std::move(theta)), lin_(map, batch, theta_) {}

Vector MetricOperator::apply(const Vector& eta) const {
  require_size(eta.size(), theta_.size(), "metric apply");
  return lin_.chunk_sum([&](const Linearization& c) { return c.vjp_sum(c.jvp(eta)); }) /
         static_cast<double>(lin_.size());
}

Vector MetricOperator::quadratic_grad(const Vector& eta) const {
  require_size(eta.size(), theta_.size(), "metric quadratic_grad");
  return lin_.chunk_sum([&](const Linearization& c) { return c.jvp_sq_grad_sum(eta); }) *
         (2.0 / static_cast<double>(lin_.size()));
}

SolveReport MetricOperator::solve(const Vector& p, const SolveOptions& opts,
                                  const Vector* warm_start) const {
  require_size(p.size(), theta_.size(), "metric solve rhs");
  return minres([this](const Vector& v) { return apply(v); }, p, opts, warm_start);
}

}  // namespace pwhf
