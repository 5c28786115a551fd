#include "dpsolve/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dpsolve/error.hpp"
#include "run_support.hpp"

namespace dpsolve {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inv(double x) { return x > 0.0 ? 1.0 / x : kInf; }

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kDpSgd: return "dp_sgd";
    case Variant::kDpSvrg: return "dp_svrg";
    case Variant::kDpAsvrg: return "dp_asvrg";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  if (name == "dp_sgd") return Variant::kDpSgd;
  if (name == "dp_svrg") return Variant::kDpSvrg;
  if (name == "dp_asvrg") return Variant::kDpAsvrg;
  return std::nullopt;
}

// --- schedules ---------------------------------------------------------------

bool ProjectionSchedule::contains(Index t) const {
  return std::binary_search(indices.begin(), indices.end(), t);
}

ProjectionSchedule make_schedule(Index total, Index gap_E) {
  if (gap_E < 1 || total < gap_E) {
    throw Error(ErrorCode::kInvalidArgument, "need 1 <= E <= total (E = " + std::to_string(gap_E) +
                                                 ", total = " + std::to_string(total) + ")");
  }
  ProjectionSchedule s{total, gap_E, {}};
  for (Index t = gap_E; t <= total; t += gap_E) s.indices.push_back(t);
  if (s.indices.back() != total) s.indices.push_back(total);
  return s;
}

ProjectionSchedule make_schedule(Index total, Index gap_E, std::vector<Index> indices) {
  if (gap_E < 1 || total < gap_E) {
    throw Error(ErrorCode::kInvalidArgument, "need 1 <= E <= total");
  }
  if (indices.empty() || indices.back() != total) {
    throw Error(ErrorCode::kGapViolation, "schedule must end at " + std::to_string(total));
  }
  Index prev = 0;
  for (Index t : indices) {
    if (t <= prev || t > total) {
      throw Error(ErrorCode::kGapViolation, "schedule must be strictly increasing within [1, total]");
    }
    if (t - prev > gap_E) {
      throw Error(ErrorCode::kGapViolation, "gap " + std::to_string(t - prev) + " before index " +
                                                std::to_string(t) + " exceeds E = " +
                                                std::to_string(gap_E));
    }
    prev = t;
  }
  return ProjectionSchedule{total, gap_E, std::move(indices)};
}

// --- θ sequence --------------------------------------------------------------

double theta_next(double theta, double delta) {
  constexpr double kSlack = 1e-12;
  if (!(delta >= 0.0 && delta < 1.0) || !(theta >= 2.0 * delta - kSlack) ||
      !(theta <= 1.0 + delta + kSlack)) {
    throw Error(ErrorCode::kDomainError, "theta_next needs delta in [0,1) and theta in [2delta, 1+delta]");
  }
  // Cancellation-free form of √((1+δ)/(1−δ)·θ² + θ⁴/(4(1−δ)²)) − θ²/(2(1−δ)).
  const double t2 = theta * theta;
  const double root = std::sqrt(t2 * t2 + 4.0 * (1.0 - delta) * (1.0 + delta) * t2);
  const double next = 2.0 * (1.0 + delta) * t2 / (t2 + root);
  return std::clamp(next, 2.0 * delta, std::max(theta, 2.0 * delta));
}

ThetaSequence ThetaSequence::make(double eta, double L, double mu, Index gap_E, Index inner_m,
                                  std::optional<double> theta0) {
  const double e2 = static_cast<double>(gap_E) * static_cast<double>(gap_E) - 1.0;
  const double delta = 9.0 * e2 * eta * eta * L * L;
  if (!(delta < 1.0)) {
    throw Error(ErrorCode::kDeltaOutOfRange, "delta = " + std::to_string(delta) + " is not below 1");
  }
  ThetaMode mode;
  double theta;
  if (mu >= detail::kMuZero) {
    mode = ThetaMode::kConstant;
    theta = theta0.value_or(2.0 * delta +
                            std::sqrt(4.0 * delta * delta + eta * mu * static_cast<double>(inner_m)));
  } else {
    mode = ThetaMode::kRecursive;
    theta = theta0.value_or(1.0 - 2.0 * eta * L / (1.0 - eta * L));
  }
  const double upper = 1.0 + delta;
  if (theta > upper && theta <= upper + 1e-12) theta = upper;
  if (!(theta > 2.0 * delta && theta <= upper)) {
    throw Error(ErrorCode::kThetaOutOfRange, "theta = " + std::to_string(theta) +
                                                 " outside (2delta, 1+delta] with delta = " +
                                                 std::to_string(delta));
  }
  return ThetaSequence(delta, theta, mode);
}

void ThetaSequence::advance() {
  if (mode_ == ThetaMode::kRecursive) theta_ = theta_next(theta_, delta_);
}

// --- step sizes --------------------------------------------------------------

double default_step_size(Variant variant, double L, double mu, Index gap_E, Index inner_m,
                         Index stages_S) {
  if (!(L > 0.0)) throw Error(ErrorCode::kInvalidArgument, "L must be positive");
  const double e = static_cast<double>(gap_E);
  switch (variant) {
    case Variant::kDpSgd:
      return std::min(1.0 / (L * (e + 9.0)), inv(mu + 25.0 * L * (e - 1.0)));
    case Variant::kDpSvrg:
      return std::min({inv(mu + 25.0 * L * (e - 1.0)), 1.0 / (10.0 * L), 1.0 / (L * (3.0 + 2.0 * e)),
                       1.0 / (mu + 24.0 * L * (2.0 * e - 1.0))});
    case Variant::kDpAsvrg: {
      const double e2 = e * e - 1.0;
      double eta_l;
      if (mu >= detail::kMuZero) {
        const double r = static_cast<double>(inner_m) * mu / L;
        const double t1 = 2.0 / (r + std::sqrt(r * r + 108.0 * e2));
        const double t2 = 1.0 / (1.0 + std::sqrt(1.0 + 27.0 * e2));
        const double t3 = e2 > 0.0 ? std::cbrt(r / (e2 * e2)) : kInf;
        eta_l = std::min({t1, t2, t3});
      } else {
        const double s = std::max<double>(2.0, static_cast<double>(stages_S));
        const double t1 = 1.0 / (2.0 + std::sqrt(4.0 + 36.0 * e2));
        const double t2 = e2 > 0.0 ? std::sqrt(std::log(s) / s) / (3.0 * std::sqrt(e2)) : kInf;
        eta_l = std::min(t1, t2);
      }
      return eta_l / L;
    }
  }
  return 0.0;
}

// --- shared machinery --------------------------------------------------------

namespace detail {

GradientSampler::GradientSampler(const Objective& objective, std::uint64_t seed, Index batch)
    : objective_(objective), batch_(batch), counts_(objective.atom_counts()) {
  if (batch < 1) throw Error(ErrorCode::kInvalidArgument, "batch must be >= 1");
  const Index n = *std::max_element(counts_.begin(), counts_.end());
  full_batch_ = batch >= n;
  cost_ = full_batch_ ? n : batch;
  for (std::uint64_t key : objective.stream_keys()) streams_.emplace_back(seed, key);
  draws_.resize(counts_.size());
}

void GradientSampler::draw() {
  if (full_batch_) return;
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    draws_[c] = draw_batch(streams_[c], counts_[c], batch_);
  }
}

Vector GradientSampler::evaluate(const Vector& x) const {
  if (full_batch_) return objective_.gradient(x);
  Vector out = Vector::Zero(objective_.dimension());
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    objective_.batch_gradient(x, static_cast<Index>(c), draws_[c], out);
  }
  return out;
}

void check_step(double eta, double L) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw Error(ErrorCode::kInvalidArgument, "step size must be positive and finite");
  }
  if (eta * L > 0.5 + 1e-12) {
    throw Error(ErrorCode::kStepTooLarge,
                "eta * L = " + std::to_string(eta * L) + " exceeds 1/2");
  }
}

}  // namespace detail

namespace {

using detail::Recorder;

double resolve_mu(const LcpProblem& problem, const SolverConfig& config) {
  const double mu = config.mu.value_or(problem.strong_convexity_mu);
  if (mu < 0.0) throw Error(ErrorCode::kInvalidArgument, "mu must be >= 0");
  return mu;
}

Recorder make_recorder(const LcpProblem& problem, const SolverConfig& config, SolveResult& result) {
  auto subopt = [&problem, &config](const Vector& x) {
    if (config.x_star) return problem.objective->excess(x, *config.x_star);
    if (config.f_star) return problem.value(x) - *config.f_star;
    return std::numeric_limits<double>::quiet_NaN();
  };
  auto feas = [&problem](const Vector& x) { return problem.subspace.feasibility_residual(x); };
  return Recorder(result.trace, result.counters, config.record_every, subopt, feas);
}

ProjectionSchedule schedule_for(const SolverConfig& config, Index total) {
  if (config.schedule) return make_schedule(total, config.gap_E, *config.schedule);
  return make_schedule(total, config.gap_E);
}

Vector start_point(const LcpProblem& problem, const SolverConfig& config) {
  if (config.x0) {
    if (config.x0->size() != problem.dimension()) {
      throw Error(ErrorCode::kDimensionMismatch, "x0 has the wrong length");
    }
    return *config.x0;
  }
  return problem.subspace.feasible_shift();
}

Vector mean_of(const std::vector<Vector>& xs) {
  Vector sum = Vector::Zero(xs.front().size());
  for (const auto& x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

void validate_inner(const SolverConfig& config) {
  if (config.inner_m < config.gap_E) {
    throw Error(ErrorCode::kInvalidArgument, "inner_m must be >= gap_E");
  }
  if (config.stages_S < 1) throw Error(ErrorCode::kInvalidArgument, "stages_S must be >= 1");
}

/// Stages of DP-ASVRG from x_start; shared by dp_asvrg and restart_asvrg.
Vector run_asvrg_stages(const LcpProblem& problem, const SolverConfig& config, double eta,
                        double mu, Index stages, const Vector& x_start, std::uint64_t seed,
                        SolveResult& result, Recorder& rec) {
  const ConstraintSubspace& sub = problem.subspace;
  const Index m = config.inner_m;
  const ProjectionSchedule sched = schedule_for(config, m);
  ThetaSequence theta = ThetaSequence::make(eta, problem.smoothness_L, mu, config.gap_E, m, config.theta);
  result.delta = theta.delta();
  detail::GradientSampler sampler(*problem.objective, seed, config.batch);
  const Index n_full = problem.n_atoms();
  ComplexityCounters& c = result.counters;

  Vector x_tilde = sub.project_feasible(x_start);
  Vector u = x_tilde;
  Vector x = x_tilde;
  std::vector<Vector> snapshots;
  for (Index s = 0; s < stages; ++s) {
    const double th = theta.current();
    result.thetas.push_back(th);
    const Vector h = sub.project_null(problem.gradient(x_tilde));
    c.gradients += n_full;
    c.projections += 1;
    Vector avg = Vector::Zero(x.size());
    double weight = 0.0;
    for (Index t = 0; t < m; ++t) {
      sampler.draw();
      const Vector g = (sampler.evaluate(x) - sampler.evaluate(x_tilde)) + h;
      c.gradients += 2 * sampler.cost();
      u = u - (eta / th) * g;
      x = x_tilde + th * (u - x_tilde);
      c.iterations += 1;
      const bool hit = sched.contains(t + 1);
      if (hit) {
        x = sub.project_feasible(x);
        u = sub.project_feasible(u);
        c.projections += 1;
        detail::require_finite(x, c.iterations);
        rec.projection_event(x);
      }
      detail::accumulate(avg, weight, 1.0, x);
      if (config.observer) {
        config.observer(StepInfo{s, t + 1, c.iterations, hit, &x, &u, &x_tilde, &h});
      }
    }
    x_tilde = sub.project_feasible(avg);
    x = x_tilde;
    c.stages += 1;
    snapshots.push_back(x_tilde);
    result.snapshots.push_back(x_tilde);
    rec.record(x_tilde, true);
    theta.advance();
  }
  result.last_iterate = x;
  return mu >= detail::kMuZero ? mean_of(snapshots) : x_tilde;
}

}  // namespace

SolveResult dp_sgd(const LcpProblem& problem, const SolverConfig& config) {
  const double mu = resolve_mu(problem, config);
  const double eta = config.eta.value_or(
      default_step_size(Variant::kDpSgd, problem.smoothness_L, mu, config.gap_E, 1, 1));
  detail::check_step(eta, problem.smoothness_L);
  const Index total = config.total_T;
  const ProjectionSchedule sched = schedule_for(config, total);
  const ConstraintSubspace& sub = problem.subspace;

  SolveResult result;
  result.eta = eta;
  result.trace.set_variant(std::string(to_string(Variant::kDpSgd)));
  Recorder rec = make_recorder(problem, config, result);
  detail::GradientSampler sampler(*problem.objective, config.seed, config.batch);
  ComplexityCounters& c = result.counters;

  const double rho = 1.0 - mu * eta;
  Vector x = start_point(problem, config);
  Vector avg = Vector::Zero(x.size());
  double weight = 0.0;
  rec.record(x, true);
  for (Index t = 1; t <= total; ++t) {
    detail::accumulate(avg, weight, rho, x);
    sampler.draw();
    const Vector g = sampler.evaluate(x);
    c.gradients += sampler.cost();
    x = x - eta * g;
    c.iterations += 1;
    const bool hit = sched.contains(t);
    if (hit) {
      x = sub.project_feasible(x);
      c.projections += 1;
      detail::require_finite(x, t);
      rec.projection_event(x);
    }
    if (config.observer) config.observer(StepInfo{0, t, t, hit, &x, nullptr, nullptr, nullptr});
  }
  result.y_hat = sub.project_feasible(avg);
  c.projections += 1;
  result.last_iterate = x;
  rec.record(result.y_hat, true);
  return result;
}

SolveResult dp_svrg(const LcpProblem& problem, const SolverConfig& config) {
  validate_inner(config);
  const double mu = resolve_mu(problem, config);
  const Index m = config.inner_m;
  const double eta = config.eta.value_or(default_step_size(
      Variant::kDpSvrg, problem.smoothness_L, mu, config.gap_E, m, config.stages_S));
  detail::check_step(eta, problem.smoothness_L);
  const ProjectionSchedule sched = schedule_for(config, m);
  const ConstraintSubspace& sub = problem.subspace;

  SolveResult result;
  result.eta = eta;
  result.trace.set_variant(std::string(to_string(Variant::kDpSvrg)));
  Recorder rec = make_recorder(problem, config, result);
  detail::GradientSampler sampler(*problem.objective, config.seed, config.batch);
  ComplexityCounters& c = result.counters;
  const Index n_full = problem.n_atoms();
  const double rho = 1.0 - mu * eta;

  Vector x_tilde = sub.project_feasible(start_point(problem, config));
  Vector x = x_tilde;
  rec.record(x_tilde, true);
  for (Index s = 0; s < config.stages_S; ++s) {
    const Vector h = sub.project_null(problem.gradient(x_tilde));
    c.gradients += n_full;
    c.projections += 1;
    Vector avg = Vector::Zero(x.size());
    double weight = 0.0;
    for (Index t = 0; t < m; ++t) {
      detail::accumulate(avg, weight, rho, x);
      sampler.draw();
      const Vector g = (sampler.evaluate(x) - sampler.evaluate(x_tilde)) + h;
      c.gradients += 2 * sampler.cost();
      x = x - eta * g;
      c.iterations += 1;
      const bool hit = sched.contains(t + 1);
      if (hit) {
        x = sub.project_feasible(x);
        c.projections += 1;
        detail::require_finite(x, c.iterations);
        rec.projection_event(x);
      }
      if (config.observer) {
        config.observer(StepInfo{s, t + 1, c.iterations, hit, &x, nullptr, &x_tilde, &h});
      }
    }
    x_tilde = sub.project_feasible(avg);
    c.stages += 1;
    result.snapshots.push_back(x_tilde);
    rec.record(x_tilde, true);
  }
  result.last_iterate = x;
  result.y_hat = mu >= detail::kMuZero ? x_tilde : mean_of(result.snapshots);
  return result;
}

SolveResult dp_asvrg(const LcpProblem& problem, const SolverConfig& config) {
  validate_inner(config);
  const double mu = resolve_mu(problem, config);
  const double eta = config.eta.value_or(default_step_size(
      Variant::kDpAsvrg, problem.smoothness_L, mu, config.gap_E, config.inner_m, config.stages_S));
  detail::check_step(eta, problem.smoothness_L);

  SolveResult result;
  result.eta = eta;
  result.trace.set_variant(std::string(to_string(Variant::kDpAsvrg)));
  Recorder rec = make_recorder(problem, config, result);
  const Vector x0 = start_point(problem, config);
  rec.record(problem.subspace.project_feasible(x0), true);
  result.y_hat = run_asvrg_stages(problem, config, eta, mu, config.stages_S, x0, config.seed,
                                  result, rec);
  return result;
}

SolveResult solve(const LcpProblem& problem, const SolverConfig& config) {
  switch (config.variant) {
    case Variant::kDpSgd: return dp_sgd(problem, config);
    case Variant::kDpSvrg: return dp_svrg(problem, config);
    case Variant::kDpAsvrg: return dp_asvrg(problem, config);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown variant");
}

Index restart_stage_count(double eta, double mu, Index inner_m, double delta, double theta) {
  const double gap = theta - 2.0 * delta;
  const double raw = 2.0 * ((1.0 - delta) / gap +
                            theta * theta / (gap * eta * mu * static_cast<double>(inner_m)) - 1.0);
  return std::max<Index>(1, static_cast<Index>(std::ceil(raw)));
}

SolveResult restart_asvrg(const LcpProblem& problem, const SolverConfig& config, double eps_target,
                          const RestartOptions& options) {
  validate_inner(config);
  if (!(eps_target > 0.0)) throw Error(ErrorCode::kInvalidArgument, "eps_target must be positive");
  const double mu = resolve_mu(problem, config);
  if (mu < detail::kMuZero) {
    throw Error(ErrorCode::kInvalidArgument, "restarting needs a strongly convex problem");
  }
  const double L = problem.smoothness_L;
  const double eta = config.eta.value_or(
      default_step_size(Variant::kDpAsvrg, L, mu, config.gap_E, config.inner_m, config.stages_S));
  detail::check_step(eta, L);
  const ThetaSequence theta = ThetaSequence::make(eta, L, mu, config.gap_E, config.inner_m, config.theta);
  const Index stages = options.stages_per_restart.value_or(
      restart_stage_count(eta, mu, config.inner_m, theta.delta(), theta.current()));

  SolveResult result;
  result.eta = eta;
  result.delta = theta.delta();
  result.trace.set_variant(std::string(to_string(Variant::kDpAsvrg)));
  Recorder rec = make_recorder(problem, config, result);
  const ConstraintSubspace& sub = problem.subspace;
  auto estimate = [&](const Vector& x) {
    if (config.x_star || config.f_star) return rec.suboptimality(x);
    return sub.project_null(problem.gradient(x)).squaredNorm() / (2.0 * mu);
  };

  Vector y = sub.project_feasible(start_point(problem, config));
  const double f0 = estimate(y);
  result.initial_suboptimality = f0;
  rec.record(y, true);
  result.y_hat = y;
  result.last_iterate = y;
  if (f0 <= eps_target) return result;

  const Index budget = options.max_restarts.value_or(
      static_cast<Index>(std::ceil(std::log2(f0 / eps_target))) + 5);
  double current = f0;
  for (Index r = 0; r < budget; ++r) {
    rec.set_restart(r);
    y = run_asvrg_stages(problem, config, eta, mu, stages, y, config.seed + static_cast<std::uint64_t>(r),
                         result, rec);
    result.restarts += 1;
    current = estimate(y);
    result.restart_suboptimality.push_back(current);
    if (current <= eps_target) break;
  }
  result.y_hat = y;
  result.budget_exhausted = current > eps_target;
  return result;
}

Vector control_variate_gradient(const LcpProblem& problem, const Vector& x, const Vector& snapshot,
                                const Vector& anchor, Index atom) {
  return (problem.atom_gradient(x, atom) - problem.atom_gradient(snapshot, atom)) + anchor;
}

}  // namespace dpsolve
