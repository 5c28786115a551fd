#include "dpsolve/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "dpsolve/error.hpp"
#include "dpsolve/rng.hpp"

namespace dpsolve {

Vector LcpProblem::atom_gradient(const Vector& x, Index atom) const {
  Vector out = Vector::Zero(dimension());
  objective->add_atom_gradient(x, 0, atom, 1.0, out);
  return out;
}

double LcpProblem::kappa() const {
  return strong_convexity_mu > 0.0 ? smoothness_L / strong_convexity_mu
                                   : std::numeric_limits<double>::infinity();
}

LcpProblem make_problem(std::string name, std::shared_ptr<const Objective> objective,
                        ConstraintSubspace subspace) {
  if (!objective) throw Error(ErrorCode::kInvalidArgument, "null objective");
  if (objective->dimension() != subspace.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "objective dimension " + std::to_string(objective->dimension()) +
                    " does not match constraint dimension " +
                    std::to_string(subspace.dimension()));
  }
  LcpProblem problem{std::move(name), std::move(objective), std::move(subspace), 0.0, 0.0};
  problem.smoothness_L = estimate_smoothness(problem);
  problem.strong_convexity_mu = problem.objective->strong_convexity();
  return problem;
}

Vector tile(const Vector& x, Index n) {
  Vector out(x.size() * n);
  for (Index k = 0; k < n; ++k) out.segment(k * x.size(), x.size()) = x;
  return out;
}

// --- generators ------------------------------------------------------------

namespace {

/// Atoms with (1/N)Σcᵢcᵢᵀ = V·diag(spread·j/(p−1))·Vᵀ exactly.
Matrix colored_atoms(const Matrix& z, double spread) {
  const Index p = z.rows();
  const double n = static_cast<double>(z.cols());
  const Matrix m = (z * z.transpose()) / n;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw Error(ErrorCode::kBadSpectrum, "sample second moment is singular");
  }
  Vector scale(p);
  for (Index j = 0; j < p; ++j) {
    const double target = p > 1 ? spread * static_cast<double>(j) / static_cast<double>(p - 1) : spread;
    scale(j) = std::sqrt(target / eig.eigenvalues()(j));
  }
  const Matrix& v = eig.eigenvectors();
  return v * scale.asDiagonal() * v.transpose() * z;
}

}  // namespace

LcpProblem make_lcqp(std::uint64_t seed, Index p, Index n_atoms, Index m_constraints,
                     double eigen_floor, double eigen_ceil) {
  if (!(eigen_floor > 0.0) || !(eigen_ceil >= eigen_floor)) {
    throw Error(ErrorCode::kBadSpectrum, "need 0 < eigen_floor <= eigen_ceil");
  }
  if (p < 1 || n_atoms < p) throw Error(ErrorCode::kInvalidArgument, "need N >= p >= 1");
  if (m_constraints < 0 || m_constraints >= p) {
    throw Error(ErrorCode::kInvalidArgument, "need 0 <= m_constraints < p");
  }
  Rng rng(seed);
  const Matrix z = rng.normal_matrix(p, n_atoms);
  const Vector g = rng.normal_vector(p);
  Matrix atoms = colored_atoms(z, eigen_ceil - eigen_floor);
  auto objective = std::make_shared<QuadraticObjective>(std::move(atoms), 1.0, eigen_floor, g);
  if (m_constraints == 0) return make_problem("lcqp", objective, ConstraintSubspace::unconstrained(p));
  const Matrix a = rng.normal_matrix(p, m_constraints);
  return make_problem("lcqp", objective, ConstraintSubspace::build(a, Vector::Zero(m_constraints)));
}

LcpProblem make_lcqp_kappa(std::uint64_t seed, Index p, Index n_atoms, Index m_constraints,
                           double kappa) {
  if (!(kappa > 1.0)) throw Error(ErrorCode::kBadSpectrum, "kappa must exceed 1");
  const LcpProblem unit = make_lcqp(seed, p, n_atoms, m_constraints, 1.0, 2.0);
  const auto& q = dynamic_cast<const QuadraticObjective&>(*unit.objective);
  const double r = q.atoms().colwise().squaredNorm().maxCoeff();
  return make_lcqp(seed, p, n_atoms, m_constraints, 1.0, 1.0 + (kappa - 1.0) / r);
}

namespace {

Matrix logreg_features(Rng& rng, Index n_samples, Index d) {
  return rng.normal_matrix(n_samples, d) / std::sqrt(static_cast<double>(d));
}

}  // namespace

LcpProblem make_constrained_logreg(std::uint64_t seed, Index n_samples, Index d, int n_classes,
                                   Index m_constraints, double weight_decay) {
  if (n_samples < 1 || d < 1 || n_classes < 2) {
    throw Error(ErrorCode::kInvalidArgument, "need N >= 1, d >= 1, n_classes >= 2");
  }
  const Index p = n_classes == 2 ? d + 1 : (d + 1) * n_classes;
  if (m_constraints < 0 || m_constraints >= p) {
    throw Error(ErrorCode::kInvalidArgument,
                "m_constraints must be below the parameter dimension " + std::to_string(p));
  }
  Rng rng(seed);
  const Matrix features = logreg_features(rng, n_samples, d);
  const int k = n_classes == 2 ? 1 : n_classes;
  const Matrix planted = 2.0 * rng.normal_matrix(d + 1, k);
  std::vector<int> labels(static_cast<std::size_t>(n_samples));
  for (Index i = 0; i < n_samples; ++i) {
    Vector a(d + 1);
    a.head(d) = features.row(i).transpose();
    a(d) = 1.0;
    const Vector z = planted.transpose() * a;
    const double u = rng.uniform();
    if (n_classes == 2) {
      labels[i] = u < 1.0 / (1.0 + std::exp(-z(0))) ? 1 : 0;
    } else {
      Vector prob = (z.array() - z.maxCoeff()).exp();
      prob /= prob.sum();
      int label = n_classes - 1;
      double acc = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        acc += prob(c);
        if (u < acc) {
          label = c;
          break;
        }
      }
      labels[i] = label;
    }
  }
  auto objective =
      std::make_shared<LogisticObjective>(features, std::move(labels), n_classes, weight_decay);
  if (m_constraints == 0) return make_problem("logreg", objective, ConstraintSubspace::unconstrained(p));
  const Matrix raw = rng.normal_matrix(p, m_constraints);
  const Matrix a = raw.householderQr().householderQ() * Matrix::Identity(p, m_constraints);
  const Vector b = a.transpose() * (0.1 * rng.normal_vector(p));
  return make_problem("logreg", objective, ConstraintSubspace::build(a, b));
}

double logreg_weight_decay_for_kappa(std::uint64_t seed, Index n_samples, Index d, int n_classes,
                                     double kappa) {
  if (!(kappa > 1.0)) throw Error(ErrorCode::kBadSpectrum, "kappa must exceed 1");
  Rng rng(seed);
  const Matrix features = logreg_features(rng, n_samples, d);
  const double max_sq = features.rowwise().squaredNorm().maxCoeff() + 1.0;
  const double data_l = (n_classes == 2 ? 0.25 : 0.5) * max_sq;
  return data_l / (kappa - 1.0);
}

Matrix incidence_matrix(std::span<const Edge> edges, Index n_nodes) {
  Matrix a = Matrix::Zero(static_cast<Index>(edges.size()), n_nodes);
  for (std::size_t l = 0; l < edges.size(); ++l) {
    const auto [from, to] = edges[l];
    if (from < 0 || to < 0 || from >= n_nodes || to >= n_nodes || from == to) {
      throw Error(ErrorCode::kInvalidArgument, "edge " + std::to_string(l) + " is invalid");
    }
    a(static_cast<Index>(l), from) = 1.0;
    a(static_cast<Index>(l), to) = -1.0;
  }
  return a;
}

namespace {

ConstraintSubspace flow_constraint(std::span<const Edge> edges, const Vector& rates) {
  const Index n = rates.size();
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "network needs at least two nodes");
  if (std::abs(rates.sum()) > 1e-12 * (1.0 + rates.lpNorm<1>())) {
    throw Error(ErrorCode::kInfeasibleRates, "node rates sum to " + std::to_string(rates.sum()));
  }
  const Matrix a = incidence_matrix(edges, n);
  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  Index components = n;
  for (const auto& e : edges) {
    const Index ra = find(e.from);
    const Index rb = find(e.to);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  if (components != 1) {
    throw Error(ErrorCode::kDisconnectedGraph,
                "graph has " + std::to_string(components) + " connected components");
  }
  return ConstraintSubspace::build(a, rates, true);
}

}  // namespace

LcpProblem make_network_flow(std::span<const Edge> edges, const Vector& node_rates,
                             const Vector& weights) {
  if (weights.size() != static_cast<Index>(edges.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "one weight per edge required");
  }
  auto subspace = flow_constraint(edges, node_rates);
  return make_problem("network_flow", std::make_shared<NetworkFlowObjective>(weights),
                      std::move(subspace));
}

LcpProblem make_network_flow(std::span<const Edge> edges, const Vector& node_rates,
                             std::vector<EdgeCost> costs) {
  if (costs.size() != edges.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one cost per edge required");
  }
  auto subspace = flow_constraint(edges, node_rates);
  return make_problem("network_flow", std::make_shared<NetworkFlowObjective>(std::move(costs)),
                      std::move(subspace));
}

// --- federated -------------------------------------------------------------

double FederatedInstance::smoothness_L() const {
  double l = 0.0;
  for (const auto& f : local_problems) l = std::max(l, f->atom_smoothness());
  return l;
}

double FederatedInstance::strong_convexity_mu() const {
  double mu = std::numeric_limits<double>::infinity();
  for (const auto& f : local_problems) mu = std::min(mu, f->strong_convexity());
  return mu;
}

double FederatedInstance::global_value(const Vector& x) const {
  double total = 0.0;
  for (const auto& f : local_problems) total += f->value(x);
  return total / static_cast<double>(n_workers);
}

double FederatedInstance::global_excess(const Vector& x) const {
  double total = 0.0;
  for (const auto& f : local_problems) total += f->excess(x, x_star);
  return total / static_cast<double>(n_workers);
}

LcpProblem lift_consensus(const FederatedInstance& fed) {
  auto lifted = std::make_shared<LiftedObjective>(fed.local_problems, fed.partition_keys);
  return make_problem("lifted", lifted, ConstraintSubspace::consensus(fed.n_workers, fed.local_dim));
}

FederatedInstance make_federated_instance(std::vector<std::shared_ptr<const Objective>> locals,
                                          std::vector<std::uint64_t> keys) {
  FederatedInstance fed;
  fed.n_workers = static_cast<Index>(locals.size());
  if (fed.n_workers < 1) throw Error(ErrorCode::kInvalidArgument, "no workers");
  fed.local_dim = locals.front()->dimension();
  for (const auto& f : locals) {
    if (f->dimension() != fed.local_dim) {
      throw Error(ErrorCode::kMismatchedDims, "local problems disagree on dimension");
    }
  }
  if (keys.empty()) {
    keys.resize(locals.size());
    std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  }
  fed.local_problems = std::move(locals);
  fed.partition_keys = std::move(keys);
  const LcpProblem lifted = lift_consensus(fed);
  const Vector x = solve_reference(lifted);
  fed.x_star = x.head(fed.local_dim);
  const Heterogeneity h = federated_heterogeneity(fed, fed.x_star);
  fed.sigma_star_sq = h.sigma_star_sq;
  fed.zeta_star_sq = h.zeta_star_sq;
  return fed;
}

FederatedInstance make_federated_quadratics(std::uint64_t seed, const FederatedQuadraticSpec& spec) {
  if (spec.n_workers < 1 || spec.dim < 1 || spec.atoms_per_worker < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need n, d, atoms >= 1");
  }
  Rng rng(seed);
  const Index d = spec.dim;
  const Index na = spec.atoms_per_worker;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::shared_ptr<const Objective>> locals;
  std::shared_ptr<const Objective> shared;
  for (Index k = 0; k < spec.n_workers; ++k) {
    if (spec.shared_atoms && shared) {
      locals.push_back(shared);
      continue;
    }
    const Vector center = spec.heterogeneity * rng.normal_vector(d);
    Matrix centers = (spec.noise * rng.normal_matrix(d, na)).colwise() + center;
    Matrix atoms = spec.curvature > 0.0 ? Matrix(inv_sqrt_d * rng.normal_matrix(d, na))
                                        : Matrix(Matrix::Zero(d, na));
    // λ‖x − c‖² + s(aᵀx)²
    Matrix linear = -2.0 * spec.ridge * centers;
    Vector constants = spec.ridge * centers.colwise().squaredNorm().transpose();
    auto f = std::make_shared<QuadraticObjective>(std::move(atoms), spec.curvature, spec.ridge,
                                                  std::move(linear), std::move(constants));
    if (spec.shared_atoms) shared = f;
    locals.push_back(std::move(f));
  }
  return make_federated_instance(std::move(locals));
}

// --- reference solutions and constants --------------------------------------

Vector solve_reference(const LcpProblem& problem, const ReferenceOptions& options) {
  const ConstraintSubspace& s = problem.subspace;
  if (auto q = problem.objective->quadratic_form()) {
    const Vector y = s.feasible_shift();
    const Matrix basis = s.null_basis();
    if (basis.cols() == 0) return y;
    const Matrix h = basis.transpose() * (2.0 * q->c) * basis;
    const Vector rhs = -basis.transpose() * (2.0 * (q->c * y) + q->g);
    Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorCode::kNoConvergence, "reduced KKT system is not factorizable");
    }
    Vector z = ldlt.solve(rhs);
    z += ldlt.solve(rhs - h * z);
    return y + basis * z;
  }
  const double eta = 1.0 / problem.full_smoothness();
  Vector x = s.project_feasible(s.feasible_shift());
  for (Index it = 0; it < options.max_iterations; ++it) {
    const Vector g = problem.gradient(x);
    const double stationarity = s.project_null(g).norm();
    if (stationarity <= options.tol && s.feasibility_residual(x) <= options.tol) return x;
    x = s.project_feasible(x - eta * g);
    if (!x.allFinite()) throw Error(ErrorCode::kNonFiniteIterate, "reference solve diverged");
  }
  throw Error(ErrorCode::kNoConvergence,
              "projected gradient descent did not reach tolerance " + std::to_string(options.tol) +
                  " in " + std::to_string(options.max_iterations) + " iterations");
}

double power_iteration_smoothness(const Matrix& c, double rel_tol) {
  Rng rng(0x5eed);
  Vector v = rng.normal_vector(c.rows());
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 100000; ++it) {
    Vector w = c * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return 2.0 * lambda;
}

double empirical_smoothness(const LcpProblem& problem, std::uint64_t seed, Index pairs) {
  Rng rng(seed);
  const auto counts = problem.objective->atom_counts();
  const Index p = problem.dimension();
  double best = 0.0;
  for (Index k = 0; k < pairs; ++k) {
    const Vector x = rng.normal_vector(p);
    const Vector y = rng.normal_vector(p);
    const Index c = rng.index_below(static_cast<Index>(counts.size()));
    const Index atom = rng.index_below(counts[c]);
    Vector gx = Vector::Zero(p);
    Vector gy = Vector::Zero(p);
    problem.objective->add_atom_gradient(x, c, atom, 1.0, gx);
    problem.objective->add_atom_gradient(y, c, atom, 1.0, gy);
    best = std::max(best, (gx - gy).norm() / (x - y).norm());
  }
  return best;
}

double estimate_smoothness(const LcpProblem& problem) {
  if (problem.objective->has_analytic_smoothness()) return problem.objective->atom_smoothness();
  return 1.5 * empirical_smoothness(problem, 0x51300, 1000);
}

VarianceAtOptimum variance_at_optimum(const LcpProblem& problem, const Vector& x_star) {
  const ConstraintSubspace& s = problem.subspace;
  const double residual = s.feasibility_residual(x_star);
  if (residual > 1e-6) {
    throw Error(ErrorCode::kInfeasiblePoint,
                "x_star violates the constraint by " + std::to_string(residual));
  }
  const Objective& f = *problem.objective;
  const Index p = f.dimension();
  const auto counts = f.atom_counts();

  // Independent draws per component: E‖Pg‖² = ‖P E g‖² + Σ_c E‖P(g_c − E g_c)‖².
  Vector mean_total = Vector::Zero(p);
  double perp = 0.0;
  double range = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const Index comp = static_cast<Index>(c);
    Vector mean = Vector::Zero(p);
    const double w = 1.0 / static_cast<double>(counts[c]);
    for (Index i = 0; i < counts[c]; ++i) f.add_atom_gradient(x_star, comp, i, w, mean);
    double perp_c = 0.0;
    double range_c = 0.0;
    for (Index i = 0; i < counts[c]; ++i) {
      Vector dev = -mean;
      f.add_atom_gradient(x_star, comp, i, 1.0, dev);
      perp_c += s.project_null(dev).squaredNorm();
      range_c += s.project_range(dev).squaredNorm();
    }
    perp += w * perp_c;
    range += w * range_c;
    mean_total += mean;
  }
  perp += s.project_null(mean_total).squaredNorm();
  range += s.project_range(mean_total).squaredNorm();
  return {perp, range};
}

Heterogeneity federated_heterogeneity(const FederatedInstance& fed, const Vector& x_star_local) {
  double sigma = 0.0;
  double zeta = 0.0;
  for (const auto& f : fed.local_problems) {
    const Index na = f->n_atoms();
    const Index d = f->dimension();
    Vector mean = Vector::Zero(d);
    const double w = 1.0 / static_cast<double>(na);
    for (Index i = 0; i < na; ++i) f->add_atom_gradient(x_star_local, 0, i, w, mean);
    double var = 0.0;
    for (Index i = 0; i < na; ++i) {
      Vector dev = -mean;
      f->add_atom_gradient(x_star_local, 0, i, 1.0, dev);
      var += dev.squaredNorm();
    }
    sigma += w * var;
    zeta += mean.squaredNorm();
  }
  const double n = static_cast<double>(fed.n_workers);
  return {sigma / n, zeta / n};
}

}  // namespace dpsolve
