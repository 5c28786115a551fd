#include "dpsolve/projection.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "dpsolve/error.hpp"

namespace dpsolve {

namespace {

constexpr double kRankCutoff = 1e-10;
constexpr double kFeasibilityTol = 1e-8;

std::atomic<int> g_null_sign_flips{0};

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInfeasibleConstraint: return "InfeasibleConstraint";
    case ErrorCode::kDegenerateConstraint: return "DegenerateConstraint";
    case ErrorCode::kBadSpectrum: return "BadSpectrum";
    case ErrorCode::kInfeasibleRates: return "InfeasibleRates";
    case ErrorCode::kDisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::kMismatchedDims: return "MismatchedDims";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kInfeasiblePoint: return "InfeasiblePoint";
    case ErrorCode::kGapViolation: return "GapViolation";
    case ErrorCode::kStepTooLarge: return "StepTooLarge";
    case ErrorCode::kNonFiniteIterate: return "NonFiniteIterate";
    case ErrorCode::kDeltaOutOfRange: return "DeltaOutOfRange";
    case ErrorCode::kThetaOutOfRange: return "ThetaOutOfRange";
    case ErrorCode::kDomainError: return "DomainError";
    case ErrorCode::kMonotonicityViolation: return "MonotonicityViolation";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kEmptySweep: return "EmptySweep";
    case ErrorCode::kSnapshotFormat: return "SnapshotFormat";
  }
  return "Unknown";
}

ConstraintSubspace ConstraintSubspace::build(const Matrix& a, const Vector& b,
                                             bool allow_point) {
  const Index p = a.rows();
  const Index m = a.cols();
  if (p < 1 || m < 1) {
    throw Error(ErrorCode::kDimensionMismatch, "constraint matrix must be at least 1x1");
  }
  if (b.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch,
                "rhs has length " + std::to_string(b.size()) + ", expected " +
                    std::to_string(m));
  }

  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double sigma_max = sv.size() > 0 ? sv(0) : 0.0;
  Index rank = 0;
  if (sigma_max > 0.0) {
    while (rank < sv.size() && sv(rank) > kRankCutoff * sigma_max) ++rank;
  }
  if (rank == p && !allow_point) {
    throw Error(ErrorCode::kDegenerateConstraint,
                "rank(A) equals the dimension; the feasible set is a single point");
  }

  ConstraintSubspace s;
  s.kind_ = SubspaceKind::kExplicitMatrix;
  s.dimension_ = p;
  s.rank_ = rank;
  s.block_dim_ = p;
  s.a_ = a;
  s.b_ = b;
  s.basis_ = svd.matrixU().leftCols(rank);
  s.null_basis_ = svd.matrixU().rightCols(p - rank);

  // Aᵀ = V Σ Uᵀ, so the least-norm solution of Aᵀy = b is U_r Σ_r⁻¹ V_rᵀ b.
  Vector coeffs = svd.matrixV().leftCols(rank).transpose() * b;
  for (Index i = 0; i < rank; ++i) coeffs(i) /= sv(i);
  s.shift_ = s.basis_ * coeffs;

  const double residual = (a.transpose() * s.shift_ - b).norm();
  if (residual > kFeasibilityTol * (1.0 + b.norm())) {
    throw Error(ErrorCode::kInfeasibleConstraint,
                "A^T y = b has no solution (least-squares residual " +
                    std::to_string(residual) + ")");
  }
  return s;
}

ConstraintSubspace ConstraintSubspace::consensus(Index n_workers, Index block_dim) {
  if (n_workers < 1 || block_dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "consensus needs n >= 1 and d >= 1");
  }
  ConstraintSubspace s;
  s.kind_ = SubspaceKind::kConsensus;
  s.dimension_ = n_workers * block_dim;
  s.rank_ = (n_workers - 1) * block_dim;
  s.workers_ = n_workers;
  s.block_dim_ = block_dim;
  s.b_ = Vector::Zero(s.rank_);
  s.shift_ = Vector::Zero(s.dimension_);
  return s;
}

ConstraintSubspace ConstraintSubspace::unconstrained(Index dimension) {
  if (dimension < 1) {
    throw Error(ErrorCode::kInvalidArgument, "dimension must be positive");
  }
  ConstraintSubspace s;
  s.kind_ = SubspaceKind::kExplicitMatrix;
  s.dimension_ = dimension;
  s.rank_ = 0;
  s.block_dim_ = dimension;
  s.a_ = Matrix::Zero(dimension, 0);
  s.b_ = Vector::Zero(0);
  s.basis_ = Matrix::Zero(dimension, 0);
  s.null_basis_ = Matrix::Identity(dimension, dimension);
  s.shift_ = Vector::Zero(dimension);
  return s;
}

void ConstraintSubspace::check_dim(const Vector& x) const {
  if (x.size() != dimension_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "vector has length " + std::to_string(x.size()) + ", subspace dimension is " +
                    std::to_string(dimension_));
  }
}

Vector ConstraintSubspace::project_range(const Vector& x) const {
  check_dim(x);
  if (kind_ == SubspaceKind::kConsensus) {
    return x - consensus_project(x, workers_, block_dim_);
  }
  if (rank_ == 0) return Vector::Zero(dimension_);
  return basis_ * (basis_.transpose() * x);
}

Vector ConstraintSubspace::project_null(const Vector& x) const {
  check_dim(x);
  Vector out;
  if (kind_ == SubspaceKind::kConsensus) {
    out = consensus_project(x, workers_, block_dim_);
  } else if (rank_ == 0) {
    out = x;
  } else {
    out = x - basis_ * (basis_.transpose() * x);
  }
  if (g_null_sign_flips.load(std::memory_order_relaxed) > 0) out = -out;
  return out;
}

Vector ConstraintSubspace::project_feasible(const Vector& x) const {
  Vector out = project_null(x);
  if (kind_ == SubspaceKind::kExplicitMatrix && rank_ > 0) out += shift_;
  return out;
}

double ConstraintSubspace::feasibility_residual(const Vector& x) const {
  check_dim(x);
  if (kind_ == SubspaceKind::kConsensus) {
    const Index d = block_dim_;
    double sq = 0.0;
    for (Index k = 0; k + 1 < workers_; ++k) {
      sq += (x.segment(k * d, d) - x.segment((k + 1) * d, d)).squaredNorm();
    }
    return std::sqrt(sq);
  }
  if (a_.cols() == 0) return 0.0;
  return (a_.transpose() * x - b_).norm();
}

Matrix ConstraintSubspace::null_basis() const {
  if (kind_ == SubspaceKind::kConsensus) {
    const Index d = block_dim_;
    Matrix basis = Matrix::Zero(dimension_, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(workers_));
    for (Index k = 0; k < workers_; ++k) {
      basis.block(k * d, 0, d, d) = scale * Matrix::Identity(d, d);
    }
    return basis;
  }
  return null_basis_;
}

Vector block_mean(std::span<const Vector> blocks) {
  if (blocks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "block_mean of zero blocks");
  }
  const Index d = blocks.front().size();
  Vector sum = Vector::Zero(d);
  Vector carry = Vector::Zero(d);
  for (const Vector& b : blocks) {
    if (b.size() != d) {
      throw Error(ErrorCode::kDimensionMismatch, "blocks of unequal length");
    }
    for (Index j = 0; j < d; ++j) {
      const double y = b(j) - carry(j);
      const double t = sum(j) + y;
      carry(j) = (t - sum(j)) - y;
      sum(j) = t;
    }
  }
  return sum / static_cast<double>(blocks.size());
}

Vector consensus_project(const Vector& x, Index n_workers, Index block_dim) {
  if (n_workers < 1 || block_dim < 1 || x.size() != n_workers * block_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "consensus_project expects length n*d = " +
                    std::to_string(n_workers * block_dim) + ", got " +
                    std::to_string(x.size()));
  }
  std::vector<Vector> blocks;
  blocks.reserve(static_cast<std::size_t>(n_workers));
  for (Index k = 0; k < n_workers; ++k) blocks.emplace_back(x.segment(k * block_dim, block_dim));
  const Vector mean = block_mean(blocks);
  Vector out(x.size());
  for (Index k = 0; k < n_workers; ++k) out.segment(k * block_dim, block_dim) = mean;
  return out;
}

Matrix consensus_constraint_matrix(Index n_workers, Index block_dim) {
  if (n_workers < 2 || block_dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "explicit consensus matrix needs n >= 2");
  }
  const Index d = block_dim;
  Matrix a = Matrix::Zero(n_workers * d, (n_workers - 1) * d);
  for (Index k = 0; k + 1 < n_workers; ++k) {
    for (Index j = 0; j < d; ++j) {
      a(k * d + j, k * d + j) = 1.0;
      a((k + 1) * d + j, k * d + j) = -1.0;
    }
  }
  return a;
}

namespace testing {

NullProjectionSignFlip::NullProjectionSignFlip() { g_null_sign_flips.fetch_add(1); }
NullProjectionSignFlip::~NullProjectionSignFlip() { g_null_sign_flips.fetch_sub(1); }

}  // namespace testing

}  // namespace dpsolve
