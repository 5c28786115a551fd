#include "dpsolve/federated.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpsolve/error.hpp"
#include "dpsolve/projection.hpp"
#include "dpsolve/rng.hpp"
#include "run_support.hpp"

namespace dpsolve {

namespace {

using detail::Recorder;

/// Worker states plus the bookkeeping shared by the three local methods.
class Cluster {
 public:
  Cluster(const FederatedInstance& fed, const SolverConfig& config, FederatedResult& result)
      : fed_(fed),
        n_(fed.n_workers),
        d_(fed.local_dim),
        batch_(config.batch),
        consensus_(ConstraintSubspace::consensus(fed.n_workers, fed.local_dim)),
        result_(result),
        recorder_(result.trace, result.counters, config.record_every,
                  [this](const Vector& s) { return fed_.global_excess(average_of_stack(s)); },
                  [this](const Vector& s) { return consensus_.feasibility_residual(s); }) {
    if (n_ < 1) throw Error(ErrorCode::kInvalidArgument, "no workers");
    if (batch_ < 1) throw Error(ErrorCode::kInvalidArgument, "batch must be >= 1");
    Index max_atoms = 0;
    for (const auto& f : fed.local_problems) max_atoms = std::max(max_atoms, f->n_atoms());
    full_batch_ = batch_ >= max_atoms;
    cost_ = full_batch_ ? max_atoms : batch_;
    n_full_ = max_atoms;
    for (Index k = 0; k < n_; ++k) streams_.emplace_back(config.seed, fed.partition_keys[k]);
    draws_.resize(static_cast<std::size_t>(n_));
  }

  Index workers() const { return n_; }
  Index dim() const { return d_; }
  Index cost() const { return cost_; }
  Index full_cost() const { return n_full_; }
  Recorder& recorder() { return recorder_; }
  const Objective& local(Index k) const { return *fed_.local_problems[k]; }

  void draw(Index k) {
    if (!full_batch_) draws_[k] = draw_batch(streams_[k], local(k).n_atoms(), batch_);
  }

  /// ∇fₖ(x; ξ⁽ᵏ⁾) for worker k's current draw.
  Vector stochastic_gradient(Index k, const Vector& x) const {
    if (full_batch_) return local(k).gradient(x);
    Vector g = Vector::Zero(d_);
    local(k).batch_gradient(x, 0, draws_[k], g);
    return g;
  }

  /// One communication round averaging one vector per worker.
  Vector all_reduce_mean(const std::vector<Vector>& values) {
    note_round();
    return block_mean(values);
  }

  void note_round() {
    result_.comm.rounds += 1;
    result_.comm.vectors_transferred += n_;
    result_.comm.bytes_equivalent += n_ * d_ * 8;
    result_.counters.comm_rounds += 1;
    result_.counters.projections += 1;
  }

  Vector stack(const std::vector<Vector>& xs) const {
    Vector out(n_ * d_);
    for (Index k = 0; k < n_; ++k) out.segment(k * d_, d_) = xs[k];
    return out;
  }

  Vector average_of_stack(const Vector& s) const {
    std::vector<Vector> blocks;
    for (Index k = 0; k < n_; ++k) blocks.emplace_back(s.segment(k * d_, d_));
    return block_mean(blocks);
  }

 private:
  const FederatedInstance& fed_;
  Index n_;
  Index d_;
  Index batch_;
  bool full_batch_ = false;
  Index cost_ = 0;
  Index n_full_ = 0;
  ConstraintSubspace consensus_;
  FederatedResult& result_;
  Recorder recorder_;
  std::vector<Rng> streams_;
  std::vector<std::vector<Index>> draws_;
};

Vector local_start(const FederatedInstance& fed, const SolverConfig& config) {
  if (!config.x0) return Vector::Zero(fed.local_dim);
  if (config.x0->size() != fed.local_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "x0 must have the local dimension");
  }
  return *config.x0;
}

double local_mu(const FederatedInstance& fed, const SolverConfig& config) {
  const double mu = config.mu.value_or(fed.strong_convexity_mu());
  if (mu < 0.0) throw Error(ErrorCode::kInvalidArgument, "mu must be >= 0");
  return mu;
}

void check_inner(const SolverConfig& config) {
  if (config.inner_m < config.gap_E) {
    throw Error(ErrorCode::kInvalidArgument, "inner_m must be >= gap_E");
  }
  if (config.stages_S < 1) throw Error(ErrorCode::kInvalidArgument, "stages_S must be >= 1");
}

ProjectionSchedule local_schedule(const SolverConfig& config, Index total) {
  if (config.schedule) return make_schedule(total, config.gap_E, *config.schedule);
  return make_schedule(total, config.gap_E);
}

Vector mean_of(const std::vector<Vector>& xs) {
  Vector sum = Vector::Zero(xs.front().size());
  for (const auto& x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace

FederatedResult local_sgd(const FederatedInstance& fed, const SolverConfig& config) {
  const double mu = local_mu(fed, config);
  const double L = fed.smoothness_L();
  const double eta = config.eta.value_or(default_step_size(Variant::kDpSgd, L, mu, config.gap_E, 1, 1));
  detail::check_step(eta, L);
  const ProjectionSchedule sched = local_schedule(config, config.total_T);

  FederatedResult result;
  result.eta = eta;
  result.trace.set_variant("local_sgd");
  Cluster cl(fed, config, result);
  const Index n = cl.workers();
  ComplexityCounters& c = result.counters;
  const double rho = 1.0 - mu * eta;

  std::vector<Vector> xs(static_cast<std::size_t>(n), local_start(fed, config));
  std::vector<Vector> avgs(static_cast<std::size_t>(n), Vector::Zero(fed.local_dim));
  std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
  cl.recorder().record(cl.stack(xs), true);
  for (Index t = 1; t <= config.total_T; ++t) {
    for (Index k = 0; k < n; ++k) {
      detail::accumulate(avgs[k], weights[k], rho, xs[k]);
      cl.draw(k);
      const Vector g = cl.stochastic_gradient(k, xs[k]);
      xs[k] = xs[k] - eta * g;
    }
    c.gradients += cl.cost();
    c.iterations += 1;
    const bool sync = sched.contains(t);
    if (sync) {
      const Vector mean = cl.all_reduce_mean(xs);
      for (auto& x : xs) x = mean;
      detail::require_finite(mean, t);
      cl.recorder().projection_event(cl.stack(xs));
    }
    if (config.observer) {
      const Vector s = cl.stack(xs);
      config.observer(StepInfo{0, t, t, sync, &s, nullptr, nullptr, nullptr});
    }
  }
  result.x_hat = cl.all_reduce_mean(avgs);
  result.last_average = block_mean(xs);
  cl.recorder().record(tile(result.x_hat, n), true);
  return result;
}

FederatedResult local_svrg(const FederatedInstance& fed, const SolverConfig& config) {
  check_inner(config);
  const double mu = local_mu(fed, config);
  const double L = fed.smoothness_L();
  const Index m = config.inner_m;
  const double eta = config.eta.value_or(
      default_step_size(Variant::kDpSvrg, L, mu, config.gap_E, m, config.stages_S));
  detail::check_step(eta, L);
  const ProjectionSchedule sched = local_schedule(config, m);

  FederatedResult result;
  result.eta = eta;
  result.trace.set_variant("local_svrg");
  Cluster cl(fed, config, result);
  const Index n = cl.workers();
  ComplexityCounters& c = result.counters;
  const double rho = 1.0 - mu * eta;

  const Vector x0 = local_start(fed, config);
  Vector x_tilde = block_mean(std::vector<Vector>(static_cast<std::size_t>(n), x0));
  std::vector<Vector> xs(static_cast<std::size_t>(n), x_tilde);
  cl.recorder().record(cl.stack(xs), true);
  for (Index s = 0; s < config.stages_S; ++s) {
    std::vector<Vector> anchors;
    for (Index k = 0; k < n; ++k) anchors.push_back(cl.local(k).gradient(x_tilde));
    const Vector h = cl.all_reduce_mean(anchors);
    c.gradients += cl.full_cost();
    std::vector<Vector> avgs(static_cast<std::size_t>(n), Vector::Zero(cl.dim()));
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    for (Index t = 0; t < m; ++t) {
      for (Index k = 0; k < n; ++k) {
        detail::accumulate(avgs[k], weights[k], rho, xs[k]);
        cl.draw(k);
        const Vector g = (cl.stochastic_gradient(k, xs[k]) - cl.stochastic_gradient(k, x_tilde)) + h;
        xs[k] = xs[k] - eta * g;
      }
      c.gradients += 2 * cl.cost();
      c.iterations += 1;
      const bool sync = sched.contains(t + 1);
      if (sync) {
        const Vector mean = cl.all_reduce_mean(xs);
        for (auto& x : xs) x = mean;
        detail::require_finite(mean, c.iterations);
        cl.recorder().projection_event(cl.stack(xs));
      }
      if (config.observer) {
        const Vector st = cl.stack(xs);
        const Vector snap = tile(x_tilde, n);
        const Vector anchor = tile(h, n);
        config.observer(StepInfo{s, t + 1, c.iterations, sync, &st, nullptr, &snap, &anchor});
      }
    }
    x_tilde = block_mean(avgs);
    c.stages += 1;
    result.snapshots.push_back(x_tilde);
    cl.recorder().record(tile(x_tilde, n), true);
  }
  result.last_average = block_mean(xs);
  result.x_hat = mu >= detail::kMuZero ? x_tilde : mean_of(result.snapshots);
  return result;
}

FederatedResult local_asvrg(const FederatedInstance& fed, const SolverConfig& config) {
  check_inner(config);
  const double mu = local_mu(fed, config);
  const double L = fed.smoothness_L();
  const Index m = config.inner_m;
  const double eta = config.eta.value_or(
      default_step_size(Variant::kDpAsvrg, L, mu, config.gap_E, m, config.stages_S));
  detail::check_step(eta, L);
  const ProjectionSchedule sched = local_schedule(config, m);
  ThetaSequence theta = ThetaSequence::make(eta, L, mu, config.gap_E, m, config.theta);

  FederatedResult result;
  result.eta = eta;
  result.trace.set_variant("local_asvrg");
  Cluster cl(fed, config, result);
  const Index n = cl.workers();
  ComplexityCounters& c = result.counters;

  const Vector x0 = local_start(fed, config);
  Vector x_tilde = block_mean(std::vector<Vector>(static_cast<std::size_t>(n), x0));
  std::vector<Vector> xs(static_cast<std::size_t>(n), x_tilde);
  std::vector<Vector> us(static_cast<std::size_t>(n), x_tilde);
  cl.recorder().record(cl.stack(xs), true);
  for (Index s = 0; s < config.stages_S; ++s) {
    const double th = theta.current();
    std::vector<Vector> anchors;
    for (Index k = 0; k < n; ++k) anchors.push_back(cl.local(k).gradient(x_tilde));
    const Vector h = cl.all_reduce_mean(anchors);
    c.gradients += cl.full_cost();
    std::vector<Vector> avgs(static_cast<std::size_t>(n), Vector::Zero(cl.dim()));
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    for (Index t = 0; t < m; ++t) {
      for (Index k = 0; k < n; ++k) {
        cl.draw(k);
        const Vector g = (cl.stochastic_gradient(k, xs[k]) - cl.stochastic_gradient(k, x_tilde)) + h;
        us[k] = us[k] - (eta / th) * g;
        xs[k] = x_tilde + th * (us[k] - x_tilde);
      }
      c.gradients += 2 * cl.cost();
      c.iterations += 1;
      const bool sync = sched.contains(t + 1);
      if (sync) {
        const Vector xm = block_mean(xs);
        const Vector um = block_mean(us);
        cl.note_round();
        for (Index k = 0; k < n; ++k) {
          xs[k] = xm;
          us[k] = um;
        }
        detail::require_finite(xm, c.iterations);
        cl.recorder().projection_event(cl.stack(xs));
      }
      for (Index k = 0; k < n; ++k) detail::accumulate(avgs[k], weights[k], 1.0, xs[k]);
      if (config.observer) {
        const Vector st = cl.stack(xs);
        const Vector su = cl.stack(us);
        const Vector snap = tile(x_tilde, n);
        const Vector anchor = tile(h, n);
        config.observer(StepInfo{s, t + 1, c.iterations, sync, &st, &su, &snap, &anchor});
      }
    }
    x_tilde = block_mean(avgs);
    for (auto& x : xs) x = x_tilde;
    c.stages += 1;
    result.snapshots.push_back(x_tilde);
    cl.recorder().record(tile(x_tilde, n), true);
    theta.advance();
  }
  result.last_average = x_tilde;
  result.x_hat = mu >= detail::kMuZero ? mean_of(result.snapshots) : x_tilde;
  return result;
}

FederatedResult run_local(const FederatedInstance& fed, const SolverConfig& config) {
  switch (config.variant) {
    case Variant::kDpSgd: return local_sgd(fed, config);
    case Variant::kDpSvrg: return local_svrg(fed, config);
    case Variant::kDpAsvrg: return local_asvrg(fed, config);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown variant");
}

EquivalenceReport equivalence_harness(const FederatedInstance& fed, Variant variant,
                                      const SolverConfig& config, std::uint64_t seed_offset) {
  const LcpProblem lifted = lift_consensus(fed);
  const Index n = fed.n_workers;

  std::vector<Vector> dp_states;
  SolverConfig dp_cfg = config;
  dp_cfg.variant = variant;
  dp_cfg.x0 = tile(local_start(fed, config), n);
  dp_cfg.x_star = tile(fed.x_star, n);
  dp_cfg.f_star.reset();
  dp_cfg.observer = [&](const StepInfo& info) { dp_states.push_back(*info.x); };
  const SolveResult dp = solve(lifted, dp_cfg);

  std::vector<Vector> local_states;
  SolverConfig local_cfg = config;
  local_cfg.variant = variant;
  local_cfg.seed = config.seed + seed_offset;
  local_cfg.observer = [&](const StepInfo& info) { local_states.push_back(*info.x); };
  const FederatedResult local = run_local(fed, local_cfg);

  EquivalenceReport report;
  report.steps = static_cast<Index>(std::min(dp_states.size(), local_states.size()));
  for (Index t = 0; t < report.steps; ++t) {
    const double gap = (dp_states[t] - local_states[t]).lpNorm<Eigen::Infinity>();
    report.max_iterate_gap = std::max(report.max_iterate_gap, gap);
    report.max_norm = std::max({report.max_norm, dp_states[t].lpNorm<Eigen::Infinity>(),
                                local_states[t].lpNorm<Eigen::Infinity>()});
  }
  report.counts_match = dp.counters.projections == local.comm.rounds &&
                        dp.counters.gradients == local.counters.gradients &&
                        dp.counters.iterations == local.counters.iterations;
  report.pass = dp_states.size() == local_states.size() && report.steps > 0 &&
                std::isfinite(report.max_iterate_gap) &&
                report.max_iterate_gap <= 1e-9 * (1.0 + report.max_norm);
  return report;
}

}  // namespace dpsolve
