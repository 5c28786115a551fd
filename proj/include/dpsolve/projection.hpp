#pragma once

#include <span>

#include "dpsolve/linalg.hpp"

namespace dpsolve {

enum class SubspaceKind { kExplicitMatrix, kConsensus };

/// Linear constraint Aᵀx = b with everything needed to project onto the
/// feasible set: an orthonormal basis of R(A), the least-norm feasible point
/// y* and, for the consensus constraint, the block structure (n workers of
/// dimension d) so that no matrix is ever materialized.
///
/// Instances are immutable after construction and safe to share between
/// threads.
class ConstraintSubspace {
 public:
  /// Factorizes A (p × m) and solves for the least-norm y* with Aᵀy* = b.
  /// Singular values below 1e-10·σ_max are treated as zero.
  /// Throws kInfeasibleConstraint if Aᵀy = b has no solution and
  /// kDegenerateConstraint if rank(A) = p unless `allow_point` is set, in
  /// which case the feasible set is the single point y*.
  static ConstraintSubspace build(const Matrix& a, const Vector& b, bool allow_point = false);

  /// The consensus constraint x⁽¹⁾ = … = x⁽ⁿ⁾ on worker-major stacked
  /// vectors of length n·d.
  static ConstraintSubspace consensus(Index n_workers, Index block_dim);

  /// No constraint at all: both projectors are trivial (P_A = 0).
  static ConstraintSubspace unconstrained(Index dimension);

  Index dimension() const { return dimension_; }
  Index rank() const { return rank_; }
  SubspaceKind kind() const { return kind_; }
  Index workers() const { return workers_; }
  Index block_dim() const { return block_dim_; }

  /// Empty for the consensus kind.
  const Matrix& a_matrix() const { return a_; }
  const Vector& rhs() const { return b_; }
  /// p × rank; empty for the consensus kind.
  const Matrix& ortho_basis() const { return basis_; }
  const Vector& feasible_shift() const { return shift_; }

  /// P_A x.
  Vector project_range(const Vector& x) const;
  /// P_{A⊥} x = x − P_A x.
  Vector project_null(const Vector& x) const;
  /// y* + P_{A⊥} x; the affine projection onto {x : Aᵀx = b}. Since y* ∈ R(A)
  /// this equals y* + P_{A⊥}(x − y*).
  Vector project_feasible(const Vector& x) const;

  /// ‖Aᵀx − b‖₂. For the consensus kind this is evaluated through the
  /// explicit difference constraints x⁽ᵏ⁾ − x⁽ᵏ⁺¹⁾ without forming A.
  double feasibility_residual(const Vector& x) const;

  /// Orthonormal basis of R(A⊥) (p × (p − rank)).
  Matrix null_basis() const;

 private:
  ConstraintSubspace() = default;
  void check_dim(const Vector& x) const;

  SubspaceKind kind_ = SubspaceKind::kExplicitMatrix;
  Index dimension_ = 0;
  Index rank_ = 0;
  Index workers_ = 1;
  Index block_dim_ = 0;
  Matrix a_;
  Vector b_;
  Matrix basis_;
  Matrix null_basis_;
  Vector shift_;
};

/// Replaces every block of x (n blocks of length d) with the block mean.
/// Summation over workers is left-to-right with Kahan compensation so the
/// result is bit-stable and identical wherever block averaging happens.
Vector consensus_project(const Vector& x, Index n_workers, Index block_dim);

/// Compensated left-to-right mean of equally sized vectors.
Vector block_mean(std::span<const Vector> blocks);

/// Explicit consensus constraint matrix for worker-major stacking:
/// column (k, j) holds +1 at x⁽ᵏ⁾ⱼ and −1 at x⁽ᵏ⁺¹⁾ⱼ. Shape (n·d) × ((n−1)·d).
Matrix consensus_constraint_matrix(Index n_workers, Index block_dim);

namespace testing {

/// Flips the sign of every project_null result while alive. Only the
/// verification suite's negative control uses this.
class NullProjectionSignFlip {
 public:
  NullProjectionSignFlip();
  ~NullProjectionSignFlip();
  NullProjectionSignFlip(const NullProjectionSignFlip&) = delete;
  NullProjectionSignFlip& operator=(const NullProjectionSignFlip&) = delete;
};

}  // namespace testing

}  // namespace dpsolve
