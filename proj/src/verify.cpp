#include "dpsolve/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "dpsolve/error.hpp"
#include "dpsolve/federated.hpp"
#include "dpsolve/problems.hpp"
#include "dpsolve/projection.hpp"
#include "dpsolve/rng.hpp"
#include "dpsolve/solvers.hpp"

namespace dpsolve {
namespace {

/// Collects invariant violations; keeps the first one for the report.
class Checks {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && first_.empty()) first_ = what;
    ok_ = ok_ && ok;
  }
  bool ok() const { return ok_; }
  const std::string& first() const { return first_; }

 private:
  bool ok_ = true;
  std::string first_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string sci(double v) { return fmt("%.2e", v); }

// Oracles built from the raw data, independent of the library projectors.

/// I − A(AᵀA)⁻¹Aᵀ via the normal equations (A with full column rank).
Matrix null_projector_oracle(const Matrix& a) {
  const Matrix gram = a.transpose() * a;
  const Matrix pa = a * gram.ldlt().solve(a.transpose());
  return Matrix::Identity(a.rows(), a.rows()) - pa;
}

/// ∇F for QuadraticObjective data: (2s/N)·C Cᵀx + 2λx + mean(g).
Vector quadratic_gradient_oracle(const QuadraticObjective& q, const Vector& x) {
  const Matrix& c = q.atoms();
  const double n = static_cast<double>(c.cols());
  Vector g = (2.0 * q.scale() / n) * (c * (c.transpose() * x)) + 2.0 * q.ridge() * x;
  g += q.linear().rowwise().mean();
  return g;
}

const QuadraticObjective& as_quadratic(const LcpProblem& p) {
  return dynamic_cast<const QuadraticObjective&>(*p.objective);
}

// --- 1 -----------------------------------------------------------------------

CriterionResult projector_algebra() {
  CriterionResult r{1, "projector algebra", false, "", 0.0, 5.0};
  Checks checks;
  double worst_rel = 0.0, worst_oracle = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed, 0xA1);
    const Index p = 2 + rng.index_below(63);
    const Index m = 1 + rng.index_below(std::min<Index>(16, p - 1));
    const Matrix a = rng.normal_matrix(p, m);
    const ConstraintSubspace s = ConstraintSubspace::build(a, Vector::Zero(m));
    const Matrix oracle_null = null_projector_oracle(a);
    const std::string tag = " (subspace " + std::to_string(seed) + ")";
    for (int k = 0; k < 5; ++k) {
      const Vector x = rng.normal_vector(p), y = rng.normal_vector(p);
      const double al = rng.normal(), be = rng.normal();
      const double scale = std::abs(al) * x.norm() + std::abs(be) * y.norm();
      const double lin = (s.project_range(al * x + be * y) -
                          (al * s.project_range(x) + be * s.project_range(y)))
                             .norm() / scale;
      const double lin_null = (s.project_null(al * x + be * y) -
                               (al * s.project_null(x) + be * s.project_null(y)))
                                  .norm() / scale;
      checks.require(lin <= 1e-10 && lin_null <= 1e-10, "linearity" + tag);
      const double dxy = (x - y).norm();
      checks.require((s.project_range(x) - s.project_range(y)).norm() <= dxy * (1 + 1e-10),
                     "non-expansiveness of P_A" + tag);
      checks.require((s.project_null(x) - s.project_null(y)).norm() <= dxy * (1 + 1e-10),
                     "non-expansiveness of P_A-perp" + tag);
      const Vector pr = s.project_range(x), pn = s.project_null(x);
      const double decomp = (x - (pr + pn)).norm() / x.norm();
      const double inner = std::abs(pr.dot(pn)) / x.squaredNorm();
      checks.require(decomp <= 1e-10 && inner <= 1e-10, "orthogonal decomposition" + tag);
      const double idem_r = (s.project_range(pr) - pr).norm() / x.norm();
      const double idem_n = (s.project_null(pn) - pn).norm() / x.norm();
      checks.require(idem_r <= 1e-10 && idem_n <= 1e-10, "idempotency" + tag);
      const double oracle = ((x - oracle_null * x) - pr).cwiseAbs().maxCoeff() / (1.0 + x.norm());
      checks.require(oracle <= 1e-9, "pseudoinverse oracle" + tag);
      worst_rel = std::max({worst_rel, lin, lin_null, decomp, inner, idem_r, idem_n});
      worst_oracle = std::max(worst_oracle, oracle);
    }
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst algebra residual " + sci(worst_rel) + ", oracle gap " + sci(worst_oracle)
                    : "violated: " + checks.first();
  return r;
}

// --- 2 -----------------------------------------------------------------------

/// Difference constraints x⁽ᵏ⁾ⱼ − x⁽ᵏ⁺¹⁾ⱼ = 0 written out entry by entry.
Matrix explicit_consensus_matrix(Index n, Index d) {
  Matrix a = Matrix::Zero(n * d, (n - 1) * d);
  for (Index k = 0; k + 1 < n; ++k) {
    for (Index j = 0; j < d; ++j) {
      a(k * d + j, k * d + j) = 1.0;
      a((k + 1) * d + j, k * d + j) = -1.0;
    }
  }
  return a;
}

CriterionResult consensus_equivalence() {
  CriterionResult r{2, "consensus projection", false, "", 0.0, 1.0};
  Checks checks;
  double worst = 0.0;
  for (Index n = 2; n <= 5; ++n) {
    for (Index d = 1; d <= 3; ++d) {
      const ConstraintSubspace explicit_s =
          ConstraintSubspace::build(explicit_consensus_matrix(n, d), Vector::Zero((n - 1) * d));
      const ConstraintSubspace fast = ConstraintSubspace::consensus(n, d);
      Rng rng(static_cast<std::uint64_t>(n * 10 + d), 0xC2);
      for (int k = 0; k < 10; ++k) {
        const Vector x = rng.normal_vector(n * d);
        const Vector want = explicit_s.project_null(x);
        const double gap = std::max((consensus_project(x, n, d) - want).cwiseAbs().maxCoeff(),
                                    (fast.project_null(x) - want).cwiseAbs().maxCoeff());
        worst = std::max(worst, gap);
        checks.require(gap <= 1e-12, "block mean = explicit null projection (n=" +
                                         std::to_string(n) + ", d=" + std::to_string(d) + ")");
      }
    }
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst gap " + sci(worst) : "violated: " + checks.first();
  return r;
}

// --- 3 -----------------------------------------------------------------------

CriterionResult variance_identities() {
  CriterionResult r{3, "variance identities", false, "", 0.0, 10.0};
  Checks checks;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FederatedQuadraticSpec spec;
    spec.n_workers = 2 + static_cast<Index>(seed % 4);
    spec.dim = 2 + static_cast<Index>(seed % 5);
    spec.atoms_per_worker = 5 + static_cast<Index>(3 * seed);
    spec.curvature = seed % 2 == 0 ? 0.0 : 0.7;
    spec.heterogeneity = seed % 5 == 4 ? 0.0 : 1.0 + 0.1 * static_cast<double>(seed);
    spec.shared_atoms = seed % 7 == 3;
    const FederatedInstance fed = make_federated_quadratics(seed, spec);
    const LcpProblem lifted = lift_consensus(fed);
    const VarianceAtOptimum v = variance_at_optimum(lifted, tile(fed.x_star, fed.n_workers));
    const double n = static_cast<double>(fed.n_workers);
    const double sig = fed.sigma_star_sq, zeta = fed.zeta_star_sq;
    const double e1 = std::abs(v.sigma_perp_sq - sig) / (1.0 + sig);
    const double range = n * zeta + (n - 1.0) * sig;
    const double e2 = std::abs(v.sigma_range_sq - range) / (1.0 + v.sigma_range_sq);
    worst = std::max({worst, e1, e2});
    const std::string tag = " (instance " + std::to_string(seed) + ")";
    checks.require(e1 <= 1e-8, "null-space variance equals local variance" + tag);
    checks.require(e2 <= 1e-8, "range variance equals n*zeta^2 + (n-1)*sigma^2" + tag);
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst relative gap " + sci(worst) : "violated: " + checks.first();
  return r;
}

// --- 4 -----------------------------------------------------------------------

CriterionResult theta_sequence() {
  CriterionResult r{4, "theta sequence", false, "", 0.0, 1.0};
  Checks checks;
  constexpr double tol = 1e-12;
  for (double delta : {0.0, 0.01, 0.3}) {
    double theta = 1.0;
    const std::string tag = " (delta=" + fmt("%g", delta) + ")";
    for (int s = 0; s < 10000; ++s) {
      const double next = theta_next(theta, delta);
      checks.require(next >= 2.0 * delta - tol && next <= 1.0 + delta + tol, "boundedness" + tag);
      checks.require(next <= theta + tol, "monotonicity" + tag);
      checks.require(next - 2.0 * delta <= (1.0 - delta) * (theta - 2.0 * delta) + tol,
                     "contraction" + tag);
      const double lhs = (1.0 - next + delta) * theta * theta;
      const double rhs = (1.0 - delta) * next * next;
      checks.require(std::abs(lhs - rhs) <= tol * std::max(rhs, theta * theta),
                     "defining equation" + tag);
      if (delta == 0.0) {
        checks.require(next <= 2.0 / (s + 3.0) + tol, "theta_s <= 2/(s+2) at step " + std::to_string(s + 1));
      }
      theta = next;
    }
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "10^4 steps at delta in {0, 0.01, 0.3}" : "violated: " + checks.first();
  return r;
}

// --- 5 -----------------------------------------------------------------------

double dp_sgd_vs_projected_sgd() {
  const LcpProblem p = make_lcqp(11, 8, 40, 3, 0.5, 4.0);
  const QuadraticObjective& q = as_quadratic(p);
  const Matrix pn = null_projector_oracle(p.subspace.a_matrix());
  SolverConfig c;
  c.variant = Variant::kDpSgd;
  c.gap_E = 1;
  c.total_T = 200;
  c.batch = p.n_atoms();
  c.record_every = 0;
  c.x0 = Vector::Ones(p.dimension());
  std::vector<Vector> xs;
  c.observer = [&](const StepInfo& s) { xs.push_back(*s.x); };
  const SolveResult res = dp_sgd(p, c);
  Vector x = Vector::Ones(p.dimension());
  double worst = 0.0;
  for (const Vector& got : xs) {
    x = pn * (x - res.eta * quadratic_gradient_oracle(q, x));
    worst = std::max(worst, (got - x).cwiseAbs().maxCoeff() / (1.0 + x.norm()));
  }
  return worst;
}

double dp_asvrg_vs_accelerated_gradient() {
  const LcpProblem p = make_lcqp(12, 8, 40, 3, 0.5, 4.0);
  const QuadraticObjective& q = as_quadratic(p);
  const Matrix pn = null_projector_oracle(p.subspace.a_matrix());
  SolverConfig c;
  c.variant = Variant::kDpAsvrg;
  c.gap_E = 1;
  c.inner_m = 1;
  c.stages_S = 200;
  c.mu = 0.0;
  c.batch = p.n_atoms();
  c.record_every = 0;
  c.x0 = Vector::Ones(p.dimension());
  std::vector<Vector> xs;
  c.observer = [&](const StepInfo& s) { xs.push_back(*s.x); };
  const SolveResult res = dp_asvrg(p, c);
  const double eta = res.eta, L = p.smoothness_L;
  double theta = 1.0 - 2.0 * eta * L / (1.0 - eta * L);
  Vector y = pn * Vector::Ones(p.dimension());
  Vector u = y;
  double worst = 0.0;
  for (const Vector& got : xs) {
    u = pn * (u - (eta / theta) * (pn * quadratic_gradient_oracle(q, y)));
    y = pn * (y + theta * (u - y));
    worst = std::max(worst, (got - y).cwiseAbs().maxCoeff() / (1.0 + y.norm()));
    const double t2 = theta * theta;
    theta = 0.5 * (std::sqrt(t2 * t2 + 4.0 * t2) - t2);
  }
  return worst;
}

double single_worker_reduction(Variant v) {
  FederatedQuadraticSpec spec;
  spec.n_workers = 1;
  spec.dim = 6;
  spec.atoms_per_worker = 30;
  spec.curvature = 0.5;
  const FederatedInstance fed = make_federated_quadratics(21, spec);
  const LcpProblem single =
      make_problem("single", fed.local_problems[0], ConstraintSubspace::unconstrained(spec.dim));
  SolverConfig c;
  c.variant = v;
  c.gap_E = 5;
  c.total_T = 200;
  c.inner_m = 50;
  c.stages_S = 4;
  c.seed = 9;
  c.record_every = 0;
  std::vector<Vector> local, dp;
  c.observer = [&](const StepInfo& s) { local.push_back(*s.x); };
  run_local(fed, c);
  c.observer = [&](const StepInfo& s) { dp.push_back(*s.x); };
  solve(single, c);
  if (local.size() != dp.size() || local.size() != 200) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < local.size(); ++i) {
    worst = std::max(worst, (local[i] - dp[i]).cwiseAbs().maxCoeff() / (1.0 + dp[i].norm()));
  }
  return worst;
}

CriterionResult reductions() {
  CriterionResult r{5, "reductions", false, "", 0.0, 10.0};
  Checks checks;
  const double sgd = dp_sgd_vs_projected_sgd();
  const double nag = dp_asvrg_vs_accelerated_gradient();
  checks.require(sgd <= 1e-10, "E=1 DP-SGD matches projected gradient descent");
  checks.require(nag <= 1e-10, "m=E=1 DP-ASVRG matches accelerated gradient");
  double local = 0.0;
  for (Variant v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    const double g = single_worker_reduction(v);
    local = std::max(local, g);
    checks.require(g <= 1e-10, "one-worker local run matches " + std::string(to_string(v)));
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "gaps: projected GD " + sci(sgd) + ", accelerated " + sci(nag) +
                          ", one worker " + sci(local)
                    : "violated: " + checks.first();
  return r;
}

// --- 6 -----------------------------------------------------------------------

CriterionResult lifted_equivalence() {
  CriterionResult r{6, "lifted equivalence", false, "", 0.0, 30.0};
  Checks checks;
  FederatedQuadraticSpec spec;
  spec.n_workers = 4;
  spec.dim = 5;
  spec.atoms_per_worker = 25;
  spec.curvature = 0.5;
  const FederatedInstance fed = make_federated_quadratics(31, spec);
  double worst = 0.0;
  for (Variant v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    SolverConfig c;
    c.variant = v;
    c.gap_E = 5;
    c.total_T = 200;
    c.inner_m = 50;
    c.stages_S = 4;
    c.seed = 17;
    c.record_every = 0;
    const EquivalenceReport coupled = equivalence_harness(fed, v, c);
    const EquivalenceReport decoupled = equivalence_harness(fed, v, c, 1);
    const std::string name(to_string(v));
    checks.require(coupled.pass && coupled.steps == 200 && coupled.counts_match,
                   "coupled " + name + " matches the lifted run");
    checks.require(!decoupled.pass, "decoupled " + name + " control detects the mismatch");
    worst = std::max(worst, coupled.max_iterate_gap / (1.0 + coupled.max_norm));
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst coupled gap " + sci(worst) + "; decoupled controls fail"
                    : "violated: " + checks.first();
  return r;
}

// --- 7 -----------------------------------------------------------------------

CriterionResult noise_floor() {
  CriterionResult r{7, "variance reduction removes the noise floor", false, "", 0.0, 180.0};
  const double wd = logreg_weight_decay_for_kappa(3, 500, 20, 2, 1e3);
  const LcpProblem p = make_constrained_logreg(3, 500, 20, 2, 10, wd);
  const Vector x_star = solve_reference(p);

  SolverConfig sgd;
  sgd.variant = Variant::kDpSgd;
  sgd.gap_E = 10;
  sgd.total_T = 3'000'000;
  sgd.seed = 1;
  sgd.record_every = 1000;
  sgd.x_star = x_star;
  const SolveResult a = dp_sgd(p, sgd);
  std::vector<double> iterate;
  for (const auto& row : a.trace.rows()) {
    if (!row.boundary) iterate.push_back(row.suboptimality);
  }
  const std::size_t half = iterate.size() / 2, quarter = iterate.size() / 4;
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += iterate[i];
    return s / static_cast<double>(to - from);
  };
  const double q3 = mean(half, half + quarter), q4 = mean(half + quarter, iterate.size());
  const double tail = mean(half, iterate.size());
  const double y_hat = a.trace.back().suboptimality;
  const double floor = std::min(tail, y_hat);

  SolverConfig svrg;
  svrg.variant = Variant::kDpSvrg;
  svrg.gap_E = 10;
  svrg.inner_m = 20000;
  svrg.stages_S = 40;
  svrg.seed = 1;
  svrg.record_every = 0;
  svrg.x_star = x_star;
  const SolveResult b = dp_svrg(p, svrg);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : b.trace.boundary_rows()) best = std::min(best, row.suboptimality);

  const bool plateau = floor > 0.0 && q4 > 0.5 * q3 && q4 < 2.0 * q3;
  r.pass = plateau && best <= 1e-3 * floor;
  r.detail = "DP-SGD iterate floor " + sci(tail) + " (tail quarters " + sci(q3) + ", " + sci(q4) +
             "), averaged output " + sci(y_hat) + "; DP-SVRG best " + sci(best) + " vs bound " +
             sci(1e-3 * floor);
  if (!plateau) r.detail = "violated: DP-SGD plateau; " + r.detail;
  return r;
}

// --- 8 -----------------------------------------------------------------------

CriterionResult linear_convergence() {
  CriterionResult r{8, "linear convergence", false, "", 0.0, 60.0};
  Checks checks;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const LcpProblem p = make_lcqp_kappa(seed, 50, 200, 10, 8.0);
    const Vector x_star = solve_reference(p);
    for (Index e : {1, 5}) {
      SolverConfig c;
      c.variant = Variant::kDpSvrg;
      c.gap_E = e;
      c.inner_m = 200;
      c.stages_S = 15;
      c.seed = seed;
      c.record_every = 0;
      c.x_star = x_star;
      const auto rows = dp_svrg(p, c).trace.boundary_rows();
      // rows[s] is the snapshot after s stages.
      for (std::size_t s = 2; s < rows.size(); ++s) {
        const double prev = rows[s - 1].suboptimality;
        if (prev <= 1e-13) break;
        const double ratio = rows[s].suboptimality / prev;
        worst = std::max(worst, ratio);
        checks.require(ratio <= 0.9, "per-stage contraction (seed " + std::to_string(seed) +
                                         ", E=" + std::to_string(e) + ", stage " +
                                         std::to_string(s) + ", ratio " + fmt("%.3f", ratio) + ")");
      }
    }
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst per-stage ratio " + fmt("%.3f", worst) : "violated: " + checks.first();
  return r;
}

// --- 9 -----------------------------------------------------------------------

CriterionResult projection_trend() {
  CriterionResult r{9, "projection efficiency trend", false, "", 0.0, 180.0};
  const Index n = 500;
  const double kappa = 10.0;
  const double wd = logreg_weight_decay_for_kappa(5, n, 20, 2, kappa);
  const LcpProblem p = make_constrained_logreg(5, n, 20, 2, 10, wd);
  const Vector x_star = solve_reference(p);
  Checks checks;
  std::string counts;
  Index prev = std::numeric_limits<Index>::max();
  for (Index e : {1, 2, 5, 10}) {
    SolverConfig c;
    c.variant = Variant::kDpSvrg;
    c.gap_E = e;
    c.inner_m = 10 * n;
    c.stages_S = 200;
    c.seed = 1;
    c.record_every = 0;
    c.x_star = x_star;
    const ComparisonRow row = complexity_to_eps(dp_svrg(p, c).trace, 1e-6);
    checks.require(row.reached, "E=" + std::to_string(e) + " reaches 1e-6");
    checks.require(row.projections_to_eps <= prev, "non-increasing at E=" + std::to_string(e));
    prev = row.projections_to_eps;
    counts += (counts.empty() ? "" : ", ") + std::string("E=") + std::to_string(e) + ": " +
              (row.reached ? std::to_string(row.projections_to_eps) : "not reached");
  }
  r.pass = checks.ok();
  r.detail = (r.pass ? "" : "violated: " + checks.first() + "; ") + "projections to 1e-6 " + counts;
  return r;
}

// --- 10 ----------------------------------------------------------------------

CriterionResult restart_halving() {
  CriterionResult r{10, "restart halving", false, "", 0.0, 120.0};
  Checks checks;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const LcpProblem p = make_lcqp_kappa(seed, 20, 100, 5, 100.0);
    SolverConfig c;
    c.variant = Variant::kDpAsvrg;
    c.gap_E = 4;
    c.inner_m = 400;
    c.seed = seed;
    c.record_every = 0;
    c.x_star = solve_reference(p);
    RestartOptions opts;
    opts.max_restarts = 5;
    const SolveResult res = restart_asvrg(p, c, std::numeric_limits<double>::min(), opts);
    checks.require(res.restart_suboptimality.size() == 5, "five restarts ran (seed " + std::to_string(seed) + ")");
    double prev = res.initial_suboptimality;
    for (std::size_t k = 0; k < res.restart_suboptimality.size(); ++k) {
      const double ratio = res.restart_suboptimality[k] / prev;
      worst = std::max(worst, ratio);
      checks.require(ratio <= 0.5, "restart " + std::to_string(k + 1) + " halves (seed " +
                                       std::to_string(seed) + ", ratio " + fmt("%.3f", ratio) + ")");
      prev = res.restart_suboptimality[k];
    }
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst restart ratio " + fmt("%.3g", worst) : "violated: " + checks.first();
  return r;
}

// --- 11 ----------------------------------------------------------------------

CriterionResult acceleration() {
  CriterionResult r{11, "acceleration", false, "", 0.0, 180.0};
  Checks checks;
  std::string counts;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const LcpProblem p = make_lcqp_kappa(seed, 20, 100, 5, 1e4);
    const Vector x_star = solve_reference(p);
    ComparisonRow rows[2];
    int i = 0;
    for (Variant v : {Variant::kDpSvrg, Variant::kDpAsvrg}) {
      SolverConfig c;
      c.variant = v;
      c.gap_E = 1;
      c.inner_m = 200;
      c.stages_S = 3000;
      c.seed = seed;
      c.record_every = 0;
      c.x_star = x_star;
      rows[i++] = complexity_to_eps(solve(p, c).trace, 1e-6);
    }
    const auto& svrg = rows[0];
    const auto& asvrg = rows[1];
    checks.require(asvrg.reached && (!svrg.reached || asvrg.stages_to_eps < svrg.stages_to_eps),
                   "DP-ASVRG needs fewer stages (seed " + std::to_string(seed) + ")");
    auto stages = [](const ComparisonRow& row) {
      return row.reached ? std::to_string(row.stages_to_eps) : std::string(">3000");
    };
    counts += (counts.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " +
              stages(asvrg) + " vs " + stages(svrg);
  }
  r.pass = checks.ok();
  r.detail = (r.pass ? "" : "violated: " + checks.first() + "; ") +
             "stages to 1e-6 (ASVRG vs SVRG) " + counts;
  return r;
}

// --- 12 ----------------------------------------------------------------------

CriterionResult unbiasedness() {
  CriterionResult r{12, "control variate unbiasedness", false, "", 0.0, 5.0};
  Checks checks;
  double worst = 0.0;
  const LcpProblem problems[] = {make_lcqp(41, 12, 60, 4, 0.5, 5.0),
                                 make_constrained_logreg(42, 80, 6, 3, 5, 1e-3)};
  for (int k = 0; k < 50; ++k) {
    const LcpProblem& p = problems[k % 2];
    Rng rng(static_cast<std::uint64_t>(k), 0xB12);
    const Vector x = rng.normal_vector(p.dimension());
    const Vector snap = rng.normal_vector(p.dimension());
    const Vector h = p.subspace.project_null(p.gradient(snap));
    Vector mean = Vector::Zero(p.dimension());
    for (Index i = 0; i < p.n_atoms(); ++i) {
      mean += p.subspace.project_null(control_variate_gradient(p, x, snap, h, i));
    }
    mean /= static_cast<double>(p.n_atoms());
    const Vector want = p.subspace.project_null(p.gradient(x));
    const double gap = (mean - want).norm() / (1.0 + want.norm());
    worst = std::max(worst, gap);
    checks.require(gap <= 1e-10, "finite-sum mean of projected control variate (state " +
                                     std::to_string(k) + ")");
  }
  r.pass = checks.ok();
  r.detail = r.pass ? "worst gap " + sci(worst) : "violated: " + checks.first();
  return r;
}

constexpr const char* kNames[] = {
    "projector algebra",          "consensus projection",     "variance identities",
    "theta sequence",             "reductions",               "lifted equivalence",
    "variance reduction removes the noise floor", "linear convergence",
    "projection efficiency trend", "restart halving",         "acceleration",
    "control variate unbiasedness"};

using Runner = CriterionResult (*)();
constexpr Runner kRunners[] = {projector_algebra,  consensus_equivalence, variance_identities,
                               theta_sequence,     reductions,            lifted_equivalence,
                               noise_floor,        linear_convergence,    projection_trend,
                               restart_halving,    acceleration,          unbiasedness};

}  // namespace

std::vector<int> criteria_for(VerifyLevel level) {
  if (level == VerifyLevel::kQuick) return {1, 2, 3, 4, 5, 6, 8, 10, 12};
  return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
}

CriterionResult run_criterion(int id) {
  if (id < 1 || id > 12) throw Error(ErrorCode::kInvalidArgument, "criterion ids are 1..12");
  const auto start = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = kRunners[id - 1]();
  } catch (const std::exception& e) {
    r.id = id;
    r.name = kNames[id - 1];
    r.pass = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.time_limit > 0.0 && r.seconds > r.time_limit) {
    r.pass = false;
    r.detail += "; exceeded " + fmt("%g", r.time_limit) + " s";
  }
  return r;
}

std::vector<CriterionResult> run_verification(const VerifyOptions& options) {
  std::optional<testing::NullProjectionSignFlip> fault;
  if (options.inject_null_sign_flip) fault.emplace();
  std::vector<CriterionResult> results;
  for (int id : criteria_for(options.level)) {
    results.push_back(run_criterion(id));
    if (options.on_result) options.on_result(results.back());
  }
  return results;
}

std::string format_result(const CriterionResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "%s %2d %s", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str());
  return std::string(head) + " (" + r.detail + ") [" + fmt("%.2f", r.seconds) + " s]";
}

}  // namespace dpsolve
