#include "pwhf/integrator.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "pwhf/diagnostics.hpp"

namespace pwhf {

std::string_view to_string(BatchPolicy v) { return v == BatchPolicy::frozen ? "frozen" : "per_step"; }
std::string_view to_string(InnerMode v) { return v == InnerMode::descent ? "descent" : "exact"; }
std::string_view to_string(Stepper v) {
  return v == Stepper::symplectic_euler ? "symplectic_euler" : "forward_euler";
}

BatchPolicy parse_batch_policy(std::string_view s) {
  if (s == "frozen") return BatchPolicy::frozen;
  if (s == "per_step" || s == "per-step") return BatchPolicy::per_step;
  throw ConfigError("unknown resample policy '" + std::string(s) + "'");
}

InnerMode parse_inner_mode(std::string_view s) {
  if (s == "descent") return InnerMode::descent;
  if (s == "exact") return InnerMode::exact;
  throw ConfigError("unknown inner mode '" + std::string(s) + "'");
}

Stepper parse_stepper(std::string_view s) {
  if (s == "symplectic_euler" || s == "symplectic") return Stepper::symplectic_euler;
  if (s == "forward_euler" || s == "forward") return Stepper::forward_euler;
  throw ConfigError("unknown stepper '" + std::string(s) + "'");
}

void SolverConfig::validate() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("h must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (inner_iters < 1) throw ConfigError("inner_iters must be at least 1");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(minres_tol > 0.0)) throw ConfigError("minres_tol must be positive");
  if (minres_max_iter < 0) throw ConfigError("minres_max_iter must be nonnegative");
  if (metric_samples < 1) throw ConfigError("metric_samples must be at least 1");
  if (potential_samples < 0) throw ConfigError("potential_samples must be nonnegative");
  if (max_consecutive_failures < 1) throw ConfigError("max_consecutive_failures must be at least 1");
  if (diag_every < 0 || checkpoint_every < 0) throw ConfigError("cadences must be nonnegative");
  if (!(divergence_bound > 0.0)) throw ConfigError("divergence_bound must be positive");
}

namespace {

Vector init_p_lin(const LinearizedBatch& lin, const VectorField& grad_phi0) {
  if (!grad_phi0) return Vector::Zero(lin.param_count());
  const Matrix x = lin.pushed();
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    Vector gi = grad_phi0(x.col(i));
    require_size(gi.size(), x.rows(), "grad_phi0 output");
    g.col(i) = gi;
  }
  return lin.vjp_mean(g);
}

bool same_bits(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

Vector init_p(const PushForwardMap& map, const ParamVector& theta0, const VectorField& grad_phi0,
              const SampleBatch& batch) {
  map.check_params(theta0);
  require_size(batch.dim(), map.dim(), "sample batch dimension");
  return init_p_lin(LinearizedBatch(map, batch, theta0), grad_phi0);
}

// Metric operator and potential estimate at one θ, on the batches current
// when it was built.
struct Solver::Evaluated {
  std::shared_ptr<const SampleBatch> metric_batch;
  std::shared_ptr<const SampleBatch> potential_batch;
  std::unique_ptr<MetricOperator> op;
  std::optional<PotentialReport> potential;
};

Solver::Solver(Problem problem, SolverConfig config)
    : problem_(std::move(problem)), config_(std::move(config)), map_(problem_.map) {
  config_.validate();
  problem_.potential.validate(problem_.map);
  if (problem_.theta0) map_.check_params(*problem_.theta0);
  warn_ = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  batch_step_ = -1;
  ensure_batches(0);
}

Solver::~Solver() = default;

const SampleBatch& Solver::potential_batch() const {
  return potential_batch_ ? *potential_batch_ : *metric_batch_;
}

void Solver::ensure_batches(Eigen::Index step) {
  const Eigen::Index key = config_.resample == BatchPolicy::frozen ? 0 : step;
  if (key == batch_step_) return;
  batch_step_ = key;
  const auto d = map_.dim();
  const std::uint64_t seed =
      key == 0 ? config_.seed : derive_seed(config_.seed, 2 * static_cast<std::uint64_t>(key) + 2);
  auto make = [&](Eigen::Index n, std::uint64_t s) {
    return std::make_shared<const SampleBatch>(config_.moment_matched
                                                   ? SampleBatch::moment_matched_normal(d, n, s)
                                                   : SampleBatch::standard_normal(d, n, s));
  };
  metric_batch_ = make(config_.metric_samples, seed);

  Eigen::Index np = config_.potential_samples;
  if (np == 0 && problem_.potential.kind == PotentialKind::interaction) np = 12000;
  potential_batch_ = np > 0 ? make(np, derive_seed(seed, 1)) : nullptr;
  cached_.reset();
}

ParamVector Solver::initial_theta() const {
  return problem_.theta0 ? *problem_.theta0 : map_.init_identity(derive_seed(config_.seed, 0));
}

ParamState Solver::initial_state() const {
  ParamState s;
  s.theta = initial_theta();
  s.p = init_p(map_, s.theta, problem_.grad_phi0, *metric_batch_);
  s.t = 0.0;
  return s;
}

std::shared_ptr<Solver::Evaluated> Solver::evaluate_at(const ParamVector& theta,
                                                             bool with_potential) {
  auto fresh = !cached_ || !same_bits(cached_->op->theta(), theta) ||
               cached_->metric_batch != metric_batch_;
  if (fresh) {
    auto e = std::make_shared<Evaluated>();
    e->metric_batch = metric_batch_;
    e->potential_batch = potential_batch_;
    e->op = std::make_unique<MetricOperator>(map_, *metric_batch_, theta);
    cached_ = std::move(e);
  }
  if (with_potential && !cached_->potential) {
    auto& e = cached_;
    const auto& spec = problem_.potential;
    if (!potential_batch_ && spec.has_field())
      e->potential = potentials::evaluate(spec, e->op->linearization());
    else
      e->potential = potentials::evaluate(spec, map_, theta, potential_batch());
  }
  return cached_;
}

void Solver::note_solve(const SolveReport& r, const char* what, double t) {
  if (r.converged) {
    consecutive_failures_ = 0;
    return;
  }
  ++consecutive_failures_;
  std::ostringstream msg;
  msg << what << " at t = " << t << ": MINRES did not converge (residual " << r.residual_norm
      << " after " << r.iterations << " iterations" << (r.stagnated ? ", stagnated" : "") << ")";
  if (consecutive_failures_ >= config_.max_consecutive_failures)
    throw SolverAbort(msg.str() + "; " + std::to_string(consecutive_failures_) +
                      " consecutive failures");
  if (warn_) warn_(msg.str());
}

SolveReport Solver::solve_velocity(const MetricOperator& op, const ParamState& state) {
  const bool warm = config_.warm_start && state.eta.size() == state.p.size();
  auto r = op.solve(state.p, config_.solve_options(), warm ? &state.eta : nullptr);
  note_solve(r, "velocity solve", state.t);
  return r;
}

void Solver::check_state(const ParamState& s) const {
  require_size(s.theta.size(), map_.param_count(), "state theta");
  require_size(s.p.size(), map_.param_count(), "state p");
  if (!s.theta.allFinite() || !s.p.allFinite())
    throw SolverAbort("non-finite state at t = " + std::to_string(s.t));
  if (s.theta.norm() > config_.divergence_bound || s.p.norm() > config_.divergence_bound)
    throw SolverAbort("state diverged at t = " + std::to_string(s.t) + " (|theta| = " +
                      std::to_string(s.theta.norm()) + ", |p| = " + std::to_string(s.p.norm()) + ")");
}

Solver::Advance Solver::advance(const ParamState& s, const Evaluated& here, const SolveReport& xi0) {
  const double h = config_.h;
  Advance out;
  ParamState& next = out.next;
  next.t = s.t + h;

  if (config_.stepper == Stepper::forward_euler) {
    next.theta = s.theta + h * xi0.solution;
    next.p = s.p + 0.5 * h * here.op->quadratic_grad(xi0.solution) - h * here.potential->grad;
    next.eta = xi0.solution;
    out.fp_residual = xi0.residual_norm;
    check_state(next);
    return out;
  }

  // Fixed-point iteration for the implicit update θ⁺ = θ + h Ĝ(θ⁺)†p.
  Vector xi = xi0.solution;
  ParamVector alpha = s.theta;
  for (int j = 0; j < config_.inner_iters; ++j) {
    const bool at_start = same_bits(alpha, s.theta);
    auto at_alpha = at_start ? nullptr : evaluate_at(alpha, false);
    const MetricOperator& op = at_start ? *here.op : *at_alpha->op;
    if (config_.inner_mode == InnerMode::descent) {
      xi -= config_.gamma * (op.apply(xi) - s.p);
    } else if (j > 0) {
      auto r = op.solve(s.p, config_.solve_options(), config_.warm_start ? &xi : nullptr);
      note_solve(r, "inner solve", s.t);
      xi = std::move(r.solution);
    }
    alpha = s.theta + h * xi;
  }
  next.theta = alpha;
  next.eta = xi;
  check_state({next.theta, s.p, next.t, {}});

  auto there = evaluate_at(next.theta, true);
  const Vector g_eta = there->op->apply(xi);
  out.fp_residual = (g_eta - s.p).norm();
  next.p = s.p + 0.5 * h * there->op->quadratic_grad(xi) - h * there->potential->grad;
  check_state(next);
  return out;
}

ParamState Solver::step(const ParamState& state) {
  check_state(state);
  auto here = evaluate_at(state.theta, true);
  const SolveReport xi0 = solve_velocity(*here->op, state);
  return advance(state, *here, xi0).next;
}

std::optional<double> Solver::delta_at(const Evaluated& here) {
  const auto& spec = problem_.potential;
  if (!spec.has_field()) return std::nullopt;
  DeltaReport r;
  if (!here.potential_batch) {
    r = diagnostics::delta_theta(*here.op, spec, config_.solve_options());
  } else {
    const MetricOperator op(map_, *here.potential_batch, here.op->theta());
    r = diagnostics::delta_theta(op, spec, config_.solve_options());
  }
  if (!r.converged && warn_) warn_("delta(theta) solve did not converge");
  return r.value;
}

TrajectoryRecord Solver::run(const RunOptions& opts) {
  ensure_batches(0);
  return run_from(initial_state(), opts);
}

TrajectoryRecord Solver::run_from(ParamState state, const RunOptions& opts) {
  if (opts.warn) warn_ = opts.warn;
  for (const auto& z : opts.tracked_points) require_size(z.size(), map_.dim(), "tracked point");
  consecutive_failures_ = 0;

  TrajectoryRecord rec;
  rec.tracked.resize(opts.tracked_points.size());
  Matrix tracked_z(map_.dim(), static_cast<Eigen::Index>(opts.tracked_points.size()));
  for (std::size_t k = 0; k < opts.tracked_points.size(); ++k)
    tracked_z.col(static_cast<Eigen::Index>(k)) = opts.tracked_points[k];

  check_state(state);
  const double t0 = state.t;
  double fp_residual = 0.0;
  for (Eigen::Index l = 0;; ++l) {
    ensure_batches(l);
    auto here = evaluate_at(state.theta, true);
    const SolveReport xi0 = solve_velocity(*here->op, state);

    StepRow row;
    row.step = l;
    row.t = state.t;
    row.kinetic = 0.5 * state.p.dot(xi0.solution);
    row.potential = here->potential->value;
    row.hamiltonian = row.kinetic + row.potential;
    row.minres_iterations = xi0.iterations;
    row.minres_residual = xi0.residual_norm;
    row.minres_converged = xi0.converged;
    row.fp_residual = fp_residual;
    if (config_.diag_every > 0 && (l % config_.diag_every == 0 || l == config_.steps))
      row.delta = delta_at(*here);
    rec.rows.push_back(row);

    if (tracked_z.cols() > 0) {
      const Linearization lz = map_.linearize(state.theta, tracked_z);
      const Matrix vel = lz.jvp(xi0.solution);
      for (Eigen::Index k = 0; k < tracked_z.cols(); ++k)
        rec.tracked[static_cast<std::size_t>(k)].push_back(
            {state.t, lz.outputs().col(k), vel.col(k)});
    }
    if (config_.checkpoint_every > 0 &&
        (l % config_.checkpoint_every == 0 || l == config_.steps))
      rec.checkpoints.push_back({l, state.t, state.theta, state.p});
    if (opts.observer) opts.observer(StateView{state, xi0.solution, rec.rows.back(), map_});

    if (l == config_.steps) break;
    Advance a = advance(state, *here, xi0);
    fp_residual = a.fp_residual;
    // Keep t on the grid l·h instead of accumulating round-off.
    a.next.t = t0 + static_cast<double>(l + 1) * config_.h;
    state = std::move(a.next);
  }
  return rec;
}

}  // namespace pwhf
