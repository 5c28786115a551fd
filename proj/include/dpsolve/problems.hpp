#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpsolve/linalg.hpp"
#include "dpsolve/projection.hpp"

namespace dpsolve {

/// F(x) = xᵀCx + gᵀx + k.
struct QuadraticForm {
  Matrix c;
  Vector g;
  double k = 0.0;
};

/// Finite-sum objective F(x) = Σ_c (1/N_c) Σ_i F_c(x; i).
///
/// Most objectives have a single draw component. A lifted consensus objective
/// has one component per worker: a stochastic draw picks one atom from every
/// component, and component c only touches its own block of x.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Index dimension() const = 0;
  virtual std::vector<Index> atom_counts() const = 0;
  Index n_atoms() const;
  Index n_components() const { return static_cast<Index>(atom_counts().size()); }

  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const;

  /// out += weight · ∇F_c(x; atom).
  virtual void add_atom_gradient(const Vector& x, Index component, Index atom, double weight,
                                 VecRef out) const = 0;

  /// out += mean over `atoms` of ∇F_c(x; atom).
  virtual void batch_gradient(const Vector& x, Index component, std::span<const Index> atoms,
                              VecRef out) const;

  /// F(x) − F(x_star), evaluated in a cancellation-free form when possible.
  virtual double excess(const Vector& x, const Vector& x_star) const;

  virtual std::optional<QuadraticForm> quadratic_form() const { return std::nullopt; }

  /// RNG stream key per draw component.
  virtual std::vector<std::uint64_t> stream_keys() const;

  /// Lipschitz constant of every atom gradient.
  virtual double atom_smoothness() const = 0;
  /// Lipschitz constant of ∇F.
  virtual double full_smoothness() const = 0;
  virtual double strong_convexity() const = 0;
  /// Whether atom_smoothness() is an analytic bound.
  virtual bool has_analytic_smoothness() const { return true; }
};

/// Atoms F(x; i) = s·(cᵢᵀx)² + λ‖x‖² + gᵢᵀx + kᵢ.
class QuadraticObjective final : public Objective {
 public:
  /// `linear` is p × N, or p × 1 when every atom shares the same g.
  QuadraticObjective(Matrix atoms, double scale, double ridge, Matrix linear,
                     Vector constants = Vector());

  /// F(x) = (1/N) Σ ½‖x − cᵢ‖².
  static std::shared_ptr<QuadraticObjective> centered(const Matrix& centers);

  Index dimension() const override { return atoms_.rows(); }
  std::vector<Index> atom_counts() const override { return {atoms_.cols()}; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  void add_atom_gradient(const Vector& x, Index component, Index atom, double weight,
                         VecRef out) const override;
  double excess(const Vector& x, const Vector& x_star) const override;
  std::optional<QuadraticForm> quadratic_form() const override;
  double atom_smoothness() const override { return atom_l_; }
  double full_smoothness() const override { return full_l_; }
  double strong_convexity() const override { return mu_; }

  const Matrix& atoms() const { return atoms_; }
  const Matrix& hessian_half() const { return c_; }
  double scale() const { return scale_; }
  double ridge() const { return ridge_; }
  const Matrix& linear() const { return linear_; }
  const Vector& constants() const { return constants_; }

 private:
  Matrix atoms_;
  double scale_;
  double ridge_;
  Matrix linear_;
  Vector constants_;
  Matrix c_;
  Vector g_mean_;
  double k_mean_ = 0.0;
  double atom_l_ = 0.0;
  double full_l_ = 0.0;
  double mu_ = 0.0;
};

/// Logistic loss with bias plus (wd/2)‖x‖². Binary (sigmoid, p = d + 1) for
/// two classes, softmax (p = (d + 1)·K, class-major blocks) otherwise.
class LogisticObjective final : public Objective {
 public:
  LogisticObjective(const Matrix& features, std::vector<int> labels, int n_classes,
                    double weight_decay);

  Index dimension() const override;
  std::vector<Index> atom_counts() const override { return {design_.rows()}; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  void add_atom_gradient(const Vector& x, Index component, Index atom, double weight,
                         VecRef out) const override;
  double atom_smoothness() const override { return atom_l_; }
  double full_smoothness() const override { return full_l_; }
  double strong_convexity() const override { return weight_decay_; }

  /// Rows are [featuresᵢ, 1].
  const Matrix& design() const { return design_; }
  const std::vector<int>& labels() const { return labels_; }
  int n_classes() const { return n_classes_; }
  double weight_decay() const { return weight_decay_; }

 private:
  Matrix design_;
  std::vector<int> labels_;
  int n_classes_;
  double weight_decay_;
  double atom_l_ = 0.0;
  double full_l_ = 0.0;
};

/// Smooth convex cost of a single edge with curvature bounds.
struct EdgeCost {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  double curvature_max = 1.0;
  double curvature_min = 0.0;
};

/// F(x) = Σₗ costₗ(xₗ); atom l is N·costₗ(xₗ).
class NetworkFlowObjective final : public Objective {
 public:
  explicit NetworkFlowObjective(Vector weights);
  explicit NetworkFlowObjective(std::vector<EdgeCost> costs);

  Index dimension() const override { return n_edges_; }
  std::vector<Index> atom_counts() const override { return {n_edges_}; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  void add_atom_gradient(const Vector& x, Index component, Index atom, double weight,
                         VecRef out) const override;
  std::optional<QuadraticForm> quadratic_form() const override;
  double atom_smoothness() const override;
  double full_smoothness() const override;
  double strong_convexity() const override;

  /// Set when built from quadratic weights.
  const std::optional<Vector>& weights() const { return weights_; }

 private:
  Index n_edges_ = 0;
  std::optional<Vector> weights_;
  std::vector<EdgeCost> costs_;
};

/// F(x) = Σₖ fₖ(x⁽ᵏ⁾) over worker-major stacked x.
class LiftedObjective final : public Objective {
 public:
  LiftedObjective(std::vector<std::shared_ptr<const Objective>> locals,
                  std::vector<std::uint64_t> keys);

  Index dimension() const override { return block_dim_ * workers(); }
  std::vector<Index> atom_counts() const override;
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  void add_atom_gradient(const Vector& x, Index component, Index atom, double weight,
                         VecRef out) const override;
  void batch_gradient(const Vector& x, Index component, std::span<const Index> atoms,
                      VecRef out) const override;
  double excess(const Vector& x, const Vector& x_star) const override;
  std::optional<QuadraticForm> quadratic_form() const override;
  std::vector<std::uint64_t> stream_keys() const override { return keys_; }
  double atom_smoothness() const override;
  double full_smoothness() const override;
  double strong_convexity() const override;
  bool has_analytic_smoothness() const override;

  Index workers() const { return static_cast<Index>(locals_.size()); }
  Index block_dim() const { return block_dim_; }
  const Objective& local(Index k) const { return *locals_[static_cast<std::size_t>(k)]; }

 private:
  Vector block(const Vector& x, Index k) const { return x.segment(k * block_dim_, block_dim_); }

  std::vector<std::shared_ptr<const Objective>> locals_;
  std::vector<std::uint64_t> keys_;
  Index block_dim_ = 0;
};

struct LcpProblem {
  std::string name;
  std::shared_ptr<const Objective> objective;
  ConstraintSubspace subspace;
  double smoothness_L = 0.0;
  double strong_convexity_mu = 0.0;

  Index dimension() const { return objective->dimension(); }
  Index n_atoms() const { return objective->n_atoms(); }
  double value(const Vector& x) const { return objective->value(x); }
  Vector gradient(const Vector& x) const { return objective->gradient(x); }
  /// ∇F(x; ξᵢ) for single-component problems.
  Vector atom_gradient(const Vector& x, Index atom) const;
  double full_smoothness() const { return objective->full_smoothness(); }
  double kappa() const;
};

/// Pairs an objective with a constraint and fills L, μ from the objective.
LcpProblem make_problem(std::string name, std::shared_ptr<const Objective> objective,
                        ConstraintSubspace subspace);

struct FederatedInstance {
  Index n_workers = 0;
  Index local_dim = 0;
  std::vector<std::shared_ptr<const Objective>> local_problems;
  std::vector<std::uint64_t> partition_keys;
  /// Minimizer of f = (1/n)Σ fₖ.
  Vector x_star;
  double sigma_star_sq = 0.0;
  double zeta_star_sq = 0.0;

  double smoothness_L() const;
  double strong_convexity_mu() const;
  /// f(x) = (1/n) Σ fₖ(x).
  double global_value(const Vector& x) const;
  /// f(x) − f(x*), summed per worker in cancellation-free form.
  double global_excess(const Vector& x) const;
};

/// Builds the instance, solves for x* and evaluates σ*², ζ*². Keys default
/// to 0..n−1.
FederatedInstance make_federated_instance(std::vector<std::shared_ptr<const Objective>> locals,
                                          std::vector<std::uint64_t> keys = {});

struct FederatedQuadraticSpec {
  Index n_workers = 4;
  Index dim = 5;
  Index atoms_per_worker = 20;
  /// Spread of worker centres (drives ζ*).
  double heterogeneity = 1.0;
  /// Spread of atoms around their worker centre (drives σ*).
  double noise = 0.5;
  /// Weight s of the rank-one curvature terms; 0 gives centred quadratics.
  double curvature = 0.0;
  double ridge = 0.5;
  /// Every worker holds the same atoms.
  bool shared_atoms = false;
};

FederatedInstance make_federated_quadratics(std::uint64_t seed, const FederatedQuadraticSpec& spec);

/// F(x) = xᵀCx + gᵀx, spectrum of C exactly spaced on [eigen_floor, eigen_ceil],
/// Gaussian constraint with b = 0 (no constraint when m_constraints = 0).
LcpProblem make_lcqp(std::uint64_t seed, Index p, Index n_atoms, Index m_constraints,
                     double eigen_floor, double eigen_ceil);

/// make_lcqp with eigen_floor = 1 and the spread chosen so L/μ = kappa.
LcpProblem make_lcqp_kappa(std::uint64_t seed, Index p, Index n_atoms, Index m_constraints,
                           double kappa);

LcpProblem make_constrained_logreg(std::uint64_t seed, Index n_samples, Index d, int n_classes,
                                   Index m_constraints, double weight_decay);

/// Weight decay giving L/μ = kappa for make_constrained_logreg(seed, …).
double logreg_weight_decay_for_kappa(std::uint64_t seed, Index n_samples, Index d, int n_classes,
                                     double kappa);

struct Edge {
  Index from;
  Index to;
};

/// Rows are edges, columns nodes; +1 at the tail, −1 at the head.
Matrix incidence_matrix(std::span<const Edge> edges, Index n_nodes);

LcpProblem make_network_flow(std::span<const Edge> edges, const Vector& node_rates,
                             const Vector& weights);
LcpProblem make_network_flow(std::span<const Edge> edges, const Vector& node_rates,
                             std::vector<EdgeCost> costs);

LcpProblem lift_consensus(const FederatedInstance& fed);

struct ReferenceOptions {
  double tol = 1e-10;
  Index max_iterations = 2'000'000;
};

/// Constrained minimizer: a null-space reduced solve of the KKT system for
/// quadratics, projected gradient descent with η = 1/L_full otherwise.
Vector solve_reference(const LcpProblem& problem, const ReferenceOptions& options = {});

/// Per-atom L: the analytic bound when known, otherwise 1.5 × the largest
/// observed ‖∇F(x;ξ) − ∇F(y;ξ)‖/‖x − y‖ over 1000 seeded pairs.
double estimate_smoothness(const LcpProblem& problem);
double empirical_smoothness(const LcpProblem& problem, std::uint64_t seed, Index pairs);

/// 2·λ_max(C) for a quadratic form by power iteration.
double power_iteration_smoothness(const Matrix& c, double rel_tol = 1e-10);

struct VarianceAtOptimum {
  double sigma_perp_sq = 0.0;
  double sigma_range_sq = 0.0;
};

VarianceAtOptimum variance_at_optimum(const LcpProblem& problem, const Vector& x_star);

struct Heterogeneity {
  double sigma_star_sq = 0.0;
  double zeta_star_sq = 0.0;
};

Heterogeneity federated_heterogeneity(const FederatedInstance& fed, const Vector& x_star_local);

/// Stacks n copies of a length-d vector.
Vector tile(const Vector& x, Index n);

}  // namespace dpsolve
