#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "dpsolve/linalg.hpp"
#include "dpsolve/metrics.hpp"
#include "dpsolve/problems.hpp"
#include "dpsolve/rng.hpp"

namespace dpsolve {

enum class Variant { kDpSgd, kDpSvrg, kDpAsvrg };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct ProjectionSchedule {
  Index total = 0;
  Index gap = 1;
  /// Sorted, in [1, total], always ends with total.
  std::vector<Index> indices;

  bool contains(Index t) const;
  Index size() const { return static_cast<Index>(indices.size()); }
};

/// {E, 2E, …, E⌊total/E⌋} ∪ {total}.
ProjectionSchedule make_schedule(Index total, Index gap_E);
/// Validates a custom index set: sorted, within [1, total], ending at total,
/// every gap (including from 0) at most gap_E.
ProjectionSchedule make_schedule(Index total, Index gap_E, std::vector<Index> indices);

/// Positive root θ' of (1 − θ' + δ)/((1 − δ)θ'²) = 1/θ².
double theta_next(double theta, double delta);

enum class ThetaMode { kConstant, kRecursive };

class ThetaSequence {
 public:
  /// μ < 1e-12 selects the recursive mode.
  static ThetaSequence make(double eta, double L, double mu, Index gap_E, Index inner_m,
                            std::optional<double> theta0 = std::nullopt);

  double delta() const { return delta_; }
  double current() const { return theta_; }
  ThetaMode mode() const { return mode_; }
  void advance();

 private:
  ThetaSequence(double delta, double theta, ThetaMode mode)
      : delta_(delta), theta_(theta), mode_(mode) {}

  double delta_;
  double theta_;
  ThetaMode mode_;
};

/// Step size prescribed for the variant. S only enters the μ = 0 DP-ASVRG rule.
double default_step_size(Variant variant, double L, double mu, Index gap_E, Index inner_m,
                         Index stages_S);

struct StepInfo {
  Index stage = 0;
  /// Inner index after the step (t + 1).
  Index inner = 0;
  /// Global iteration count.
  Index iter = 0;
  bool projected = false;
  const Vector* x = nullptr;
  const Vector* u = nullptr;
  const Vector* snapshot = nullptr;
  const Vector* anchor = nullptr;
};

using StepObserver = std::function<void(const StepInfo&)>;

struct SolverConfig {
  Variant variant = Variant::kDpSgd;
  /// Unset: default_step_size.
  std::optional<double> eta;
  Index gap_E = 1;
  Index inner_m = 1;
  Index stages_S = 1;
  Index total_T = 1;
  /// Unset: the problem's μ.
  std::optional<double> mu;
  Index batch = 1;
  std::uint64_t seed = 0;
  /// Record every k-th projection event; 0 records stage boundaries only.
  Index record_every = 1;
  std::optional<double> theta;
  std::optional<std::vector<Index>> schedule;
  /// Unset: the least-norm feasible point.
  std::optional<Vector> x0;
  /// Reference optimum for suboptimality; f_star alone falls back to F(x) − f_star.
  std::optional<Vector> x_star;
  std::optional<double> f_star;
  StepObserver observer;
};

struct SolveResult {
  Vector y_hat;
  Vector last_iterate;
  RunTrace trace;
  ComplexityCounters counters;
  std::vector<Vector> snapshots;
  double eta = 0.0;
  double delta = 0.0;
  std::vector<double> thetas;
  bool budget_exhausted = false;
  Index restarts = 0;
  /// Suboptimality (or its estimate) after each restart.
  std::vector<double> restart_suboptimality;
  double initial_suboptimality = 0.0;
};

SolveResult dp_sgd(const LcpProblem& problem, const SolverConfig& config);
SolveResult dp_svrg(const LcpProblem& problem, const SolverConfig& config);
SolveResult dp_asvrg(const LcpProblem& problem, const SolverConfig& config);
SolveResult solve(const LcpProblem& problem, const SolverConfig& config);

struct RestartOptions {
  /// Unset: ⌈2[(1−δ)/(θ−2δ) + θ²/((θ−2δ)ημm) − 1]⌉.
  std::optional<Index> stages_per_restart;
  /// Unset: ⌈log₂(F₀/ε)⌉ + 5.
  std::optional<Index> max_restarts;
};

/// Restarts DP-ASVRG from its previous output until the suboptimality (or
/// ‖P∇F‖²/(2μ) without a reference) is at most eps_target.
SolveResult restart_asvrg(const LcpProblem& problem, const SolverConfig& config, double eps_target,
                          const RestartOptions& options = {});

/// Stages per restart for the given constants.
Index restart_stage_count(double eta, double mu, Index inner_m, double delta, double theta);

/// ∇F(x; ξ) − ∇F(x̃; ξ) + h for a single-component atom.
Vector control_variate_gradient(const LcpProblem& problem, const Vector& x, const Vector& snapshot,
                                const Vector& anchor, Index atom);

namespace detail {

/// Draws and evaluates (mini-batch) stochastic gradients with one RNG stream
/// per draw component. batch ≥ N switches to the exact full gradient.
class GradientSampler {
 public:
  GradientSampler(const Objective& objective, std::uint64_t seed, Index batch);

  bool full_batch() const { return full_batch_; }
  /// Gradient evaluations charged per call to evaluate.
  Index cost() const { return cost_; }
  void draw();
  /// ∇F(x; ξ) for the current draw.
  Vector evaluate(const Vector& x) const;

 private:
  const Objective& objective_;
  Index batch_;
  bool full_batch_;
  Index cost_;
  std::vector<Index> counts_;
  std::vector<Rng> streams_;
  std::vector<std::vector<Index>> draws_;
};

void check_step(double eta, double L);

}  // namespace detail

}  // namespace dpsolve
