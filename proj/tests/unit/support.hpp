#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dpsolve/linalg.hpp"
#include "dpsolve/rng.hpp"

namespace oracle {

using dpsolve::Index;
using dpsolve::Matrix;
using dpsolve::Vector;

/// A(AᵀA)⁻¹Aᵀ via the normal equations; A must have full column rank.
inline Matrix range_projector(const Matrix& a) {
  return a * (a.transpose() * a).ldlt().solve(a.transpose());
}

inline Matrix null_projector(const Matrix& a) {
  return Matrix::Identity(a.rows(), a.rows()) - range_projector(a);
}

/// Central differences with step h·(1 + |xᵢ|).
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double step = h * (1.0 + std::abs(x(i)));
    Vector a = x, b = x;
    a(i) += step;
    b(i) -= step;
    g(i) = (f(a) - f(b)) / (2.0 * step);
  }
  return g;
}

inline double rel_err(const Vector& got, const Vector& want) {
  return (got - want).norm() / (1.0 + want.norm());
}

inline double max_abs(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline double lambda_max(const Matrix& sym) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().maxCoeff();
}

inline double lambda_min(const Matrix& sym) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff();
}

}  // namespace oracle

namespace oracle {

/// x − A(AᵀA)⁻¹(Aᵀx − b).
inline Vector affine_projection(const Matrix& a, const Vector& b, const Vector& x) {
  return x - a * (a.transpose() * a).ldlt().solve(a.transpose() * x - b);
}

}  // namespace oracle
