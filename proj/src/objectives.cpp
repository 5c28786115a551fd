#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "dpsolve/error.hpp"
#include "dpsolve/problems.hpp"

namespace dpsolve {

namespace {

void require_dim(const Vector& x, Index p) {
  if (x.size() != p) {
    throw Error(ErrorCode::kDimensionMismatch, "vector has length " + std::to_string(x.size()) +
                                                   ", objective dimension is " + std::to_string(p));
  }
}

void require_atom(Index component, Index atom, Index n) {
  if (component != 0 || atom < 0 || atom >= n) {
    throw Error(ErrorCode::kInvalidArgument, "atom (" + std::to_string(component) + ", " +
                                                 std::to_string(atom) + ") out of range");
  }
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Vector softmax(const Vector& z) {
  const double zmax = z.maxCoeff();
  Vector e = (z.array() - zmax).exp();
  return e / e.sum();
}

double log_sum_exp(const Vector& z) {
  const double zmax = z.maxCoeff();
  return zmax + std::log((z.array() - zmax).exp().sum());
}

}  // namespace

Index Objective::n_atoms() const {
  const auto counts = atom_counts();
  return *std::max_element(counts.begin(), counts.end());
}

Vector Objective::gradient(const Vector& x) const {
  Vector out = Vector::Zero(dimension());
  const auto counts = atom_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double w = 1.0 / static_cast<double>(counts[c]);
    for (Index i = 0; i < counts[c]; ++i) add_atom_gradient(x, static_cast<Index>(c), i, w, out);
  }
  return out;
}

void Objective::batch_gradient(const Vector& x, Index component, std::span<const Index> atoms,
                               VecRef out) const {
  const double w = 1.0 / static_cast<double>(atoms.size());
  for (Index a : atoms) add_atom_gradient(x, component, a, w, out);
}

double Objective::excess(const Vector& x, const Vector& x_star) const {
  return value(x) - value(x_star);
}

std::vector<std::uint64_t> Objective::stream_keys() const {
  std::vector<std::uint64_t> keys(atom_counts().size());
  std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  return keys;
}

// ---------------------------------------------------------------------------

QuadraticObjective::QuadraticObjective(Matrix atoms, double scale, double ridge, Matrix linear,
                                       Vector constants)
    : atoms_(std::move(atoms)),
      scale_(scale),
      ridge_(ridge),
      linear_(std::move(linear)),
      constants_(std::move(constants)) {
  const Index p = atoms_.rows();
  const Index n = atoms_.cols();
  if (p < 1 || n < 1) throw Error(ErrorCode::kInvalidArgument, "quadratic needs p, N >= 1");
  if (linear_.rows() != p || (linear_.cols() != n && linear_.cols() != 1)) {
    throw Error(ErrorCode::kDimensionMismatch, "linear terms must be p x N or p x 1");
  }
  if (constants_.size() == 0) constants_ = Vector::Zero(n);
  if (constants_.size() != n) throw Error(ErrorCode::kDimensionMismatch, "constants must have N entries");
  if (scale_ < 0.0 || ridge_ < 0.0) throw Error(ErrorCode::kBadSpectrum, "scale and ridge must be >= 0");

  c_ = (scale_ / static_cast<double>(n)) * (atoms_ * atoms_.transpose());
  c_.diagonal().array() += ridge_;
  g_mean_ = linear_.rowwise().mean();
  k_mean_ = constants_.mean();

  atom_l_ = 2.0 * (scale_ * atoms_.colwise().squaredNorm().maxCoeff() + ridge_);
  full_l_ = power_iteration_smoothness(c_);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c_, Eigen::EigenvaluesOnly);
  mu_ = std::max(0.0, 2.0 * eig.eigenvalues()(0));
}

std::shared_ptr<QuadraticObjective> QuadraticObjective::centered(const Matrix& centers) {
  const Index p = centers.rows();
  const Index n = centers.cols();
  Vector k = 0.5 * centers.colwise().squaredNorm().transpose();
  return std::make_shared<QuadraticObjective>(Matrix::Zero(p, n), 0.0, 0.5, -centers, k);
}

double QuadraticObjective::value(const Vector& x) const {
  require_dim(x, dimension());
  return x.dot(c_ * x) + g_mean_.dot(x) + k_mean_;
}

Vector QuadraticObjective::gradient(const Vector& x) const {
  require_dim(x, dimension());
  return 2.0 * (c_ * x) + g_mean_;
}

void QuadraticObjective::add_atom_gradient(const Vector& x, Index component, Index atom,
                                           double weight, VecRef out) const {
  require_atom(component, atom, atoms_.cols());
  if (scale_ != 0.0) {
    const double ci = scale_ * atoms_.col(atom).dot(x);
    out.noalias() += (2.0 * weight * ci) * atoms_.col(atom);
  }
  out.noalias() += (2.0 * weight * ridge_) * x;
  out.noalias() += weight * linear_.col(linear_.cols() == 1 ? 0 : atom);
}

double QuadraticObjective::excess(const Vector& x, const Vector& x_star) const {
  require_dim(x, dimension());
  require_dim(x_star, dimension());
  const Vector d = x - x_star;
  return d.dot(c_ * d) + gradient(x_star).dot(d);
}

std::optional<QuadraticForm> QuadraticObjective::quadratic_form() const {
  return QuadraticForm{c_, g_mean_, k_mean_};
}

// ---------------------------------------------------------------------------

LogisticObjective::LogisticObjective(const Matrix& features, std::vector<int> labels,
                                     int n_classes, double weight_decay)
    : labels_(std::move(labels)), n_classes_(n_classes), weight_decay_(weight_decay) {
  const Index n = features.rows();
  const Index d = features.cols();
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "logistic regression needs N >= 1");
  if (n_classes_ < 2) throw Error(ErrorCode::kInvalidArgument, "n_classes must be >= 2");
  if (static_cast<Index>(labels_.size()) != n) {
    throw Error(ErrorCode::kDimensionMismatch, "one label per sample required");
  }
  for (int y : labels_) {
    if (y < 0 || y >= n_classes_) throw Error(ErrorCode::kInvalidArgument, "label out of range");
  }
  if (weight_decay_ < 0.0) throw Error(ErrorCode::kInvalidArgument, "weight decay must be >= 0");
  design_.resize(n, d + 1);
  design_.leftCols(d) = features;
  design_.col(d).setOnes();

  const double factor = n_classes_ == 2 ? 0.25 : 0.5;
  atom_l_ = factor * design_.rowwise().squaredNorm().maxCoeff() + weight_decay_;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(design_.transpose() * design_, Eigen::EigenvaluesOnly);
  full_l_ = factor * eig.eigenvalues().maxCoeff() / static_cast<double>(n) + weight_decay_;
}

Index LogisticObjective::dimension() const {
  return n_classes_ == 2 ? design_.cols() : design_.cols() * n_classes_;
}

double LogisticObjective::value(const Vector& x) const {
  require_dim(x, dimension());
  const Index n = design_.rows();
  double loss = 0.0;
  if (n_classes_ == 2) {
    const Vector z = design_ * x;
    for (Index i = 0; i < n; ++i) loss += softplus(z(i)) - (labels_[i] == 1 ? z(i) : 0.0);
  } else {
    const Index q = design_.cols();
    const Eigen::Map<const Matrix> w(x.data(), q, n_classes_);
    const Matrix z = design_ * w;
    for (Index i = 0; i < n; ++i) {
      const Vector zi = z.row(i).transpose();
      loss += log_sum_exp(zi) - zi(labels_[i]);
    }
  }
  return loss / static_cast<double>(n) + 0.5 * weight_decay_ * x.squaredNorm();
}

Vector LogisticObjective::gradient(const Vector& x) const {
  require_dim(x, dimension());
  const Index n = design_.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (n_classes_ == 2) {
    Vector r = design_ * x;
    for (Index i = 0; i < n; ++i) r(i) = sigmoid(r(i)) - (labels_[i] == 1 ? 1.0 : 0.0);
    return inv_n * (design_.transpose() * r) + weight_decay_ * x;
  }
  const Index q = design_.cols();
  const Eigen::Map<const Matrix> w(x.data(), q, n_classes_);
  Matrix probs = design_ * w;
  for (Index i = 0; i < n; ++i) {
    probs.row(i) = softmax(probs.row(i).transpose()).transpose();
    probs(i, labels_[i]) -= 1.0;
  }
  const Matrix g = inv_n * (design_.transpose() * probs);
  return Eigen::Map<const Vector>(g.data(), g.size()) + weight_decay_ * x;
}

void LogisticObjective::add_atom_gradient(const Vector& x, Index component, Index atom,
                                          double weight, VecRef out) const {
  require_atom(component, atom, design_.rows());
  const auto a = design_.row(atom).transpose();
  if (n_classes_ == 2) {
    const double r = sigmoid(a.dot(x)) - (labels_[atom] == 1 ? 1.0 : 0.0);
    out.noalias() += (weight * r) * a;
  } else {
    const Index q = design_.cols();
    const Eigen::Map<const Matrix> w(x.data(), q, n_classes_);
    Vector p = softmax(w.transpose() * a);
    p(labels_[atom]) -= 1.0;
    for (int k = 0; k < n_classes_; ++k) out.segment(k * q, q).noalias() += (weight * p(k)) * a;
  }
  out.noalias() += (weight * weight_decay_) * x;
}

// ---------------------------------------------------------------------------

NetworkFlowObjective::NetworkFlowObjective(Vector weights)
    : n_edges_(weights.size()), weights_(std::move(weights)) {
  if (n_edges_ < 1) throw Error(ErrorCode::kInvalidArgument, "network needs at least one edge");
  if ((weights_->array() <= 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "edge weights must be positive");
  }
}

NetworkFlowObjective::NetworkFlowObjective(std::vector<EdgeCost> costs)
    : n_edges_(static_cast<Index>(costs.size())), costs_(std::move(costs)) {
  if (n_edges_ < 1) throw Error(ErrorCode::kInvalidArgument, "network needs at least one edge");
  for (const auto& c : costs_) {
    if (!c.value || !c.derivative) {
      throw Error(ErrorCode::kInvalidArgument, "edge cost needs value and derivative");
    }
    if (c.curvature_max <= 0.0 || c.curvature_min < 0.0 || c.curvature_min > c.curvature_max) {
      throw Error(ErrorCode::kInvalidArgument, "edge cost curvature bounds are inconsistent");
    }
  }
}

double NetworkFlowObjective::value(const Vector& x) const {
  require_dim(x, n_edges_);
  if (weights_) return 0.5 * weights_->dot(x.cwiseProduct(x));
  double total = 0.0;
  for (Index l = 0; l < n_edges_; ++l) total += costs_[l].value(x(l));
  return total;
}

Vector NetworkFlowObjective::gradient(const Vector& x) const {
  require_dim(x, n_edges_);
  if (weights_) return weights_->cwiseProduct(x);
  Vector g(n_edges_);
  for (Index l = 0; l < n_edges_; ++l) g(l) = costs_[l].derivative(x(l));
  return g;
}

void NetworkFlowObjective::add_atom_gradient(const Vector& x, Index component, Index atom,
                                             double weight, VecRef out) const {
  require_atom(component, atom, n_edges_);
  const double n = static_cast<double>(n_edges_);
  const double d = weights_ ? (*weights_)(atom) * x(atom) : costs_[atom].derivative(x(atom));
  out(atom) += weight * n * d;
}

std::optional<QuadraticForm> NetworkFlowObjective::quadratic_form() const {
  if (!weights_) return std::nullopt;
  Matrix c = Matrix::Zero(n_edges_, n_edges_);
  c.diagonal() = 0.5 * *weights_;
  return QuadraticForm{c, Vector::Zero(n_edges_), 0.0};
}

double NetworkFlowObjective::atom_smoothness() const {
  return static_cast<double>(n_edges_) * full_smoothness();
}

double NetworkFlowObjective::full_smoothness() const {
  if (weights_) return weights_->maxCoeff();
  double m = 0.0;
  for (const auto& c : costs_) m = std::max(m, c.curvature_max);
  return m;
}

double NetworkFlowObjective::strong_convexity() const {
  if (weights_) return weights_->minCoeff();
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : costs_) m = std::min(m, c.curvature_min);
  return m;
}

// ---------------------------------------------------------------------------

LiftedObjective::LiftedObjective(std::vector<std::shared_ptr<const Objective>> locals,
                                 std::vector<std::uint64_t> keys)
    : locals_(std::move(locals)), keys_(std::move(keys)) {
  if (locals_.empty()) throw Error(ErrorCode::kInvalidArgument, "no local problems");
  block_dim_ = locals_.front()->dimension();
  for (const auto& f : locals_) {
    if (!f) throw Error(ErrorCode::kInvalidArgument, "null local problem");
    if (f->dimension() != block_dim_) {
      throw Error(ErrorCode::kMismatchedDims,
                  "local problems have dimensions " + std::to_string(block_dim_) + " and " +
                      std::to_string(f->dimension()));
    }
    if (f->n_components() != 1) {
      throw Error(ErrorCode::kInvalidArgument, "local problems must be plain finite sums");
    }
  }
  if (keys_.empty()) {
    keys_.resize(locals_.size());
    std::iota(keys_.begin(), keys_.end(), std::uint64_t{0});
  }
  if (keys_.size() != locals_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one partition key per worker required");
  }
}

std::vector<Index> LiftedObjective::atom_counts() const {
  std::vector<Index> counts;
  counts.reserve(locals_.size());
  for (const auto& f : locals_) counts.push_back(f->n_atoms());
  return counts;
}

double LiftedObjective::value(const Vector& x) const {
  require_dim(x, dimension());
  double total = 0.0;
  for (Index k = 0; k < workers(); ++k) total += local(k).value(block(x, k));
  return total;
}

Vector LiftedObjective::gradient(const Vector& x) const {
  require_dim(x, dimension());
  Vector g(dimension());
  for (Index k = 0; k < workers(); ++k) {
    g.segment(k * block_dim_, block_dim_) = local(k).gradient(block(x, k));
  }
  return g;
}

void LiftedObjective::add_atom_gradient(const Vector& x, Index component, Index atom,
                                        double weight, VecRef out) const {
  local(component).add_atom_gradient(block(x, component), 0, atom, weight,
                                     out.segment(component * block_dim_, block_dim_));
}

void LiftedObjective::batch_gradient(const Vector& x, Index component,
                                     std::span<const Index> atoms, VecRef out) const {
  local(component).batch_gradient(block(x, component), 0, atoms,
                                  out.segment(component * block_dim_, block_dim_));
}

double LiftedObjective::excess(const Vector& x, const Vector& x_star) const {
  require_dim(x, dimension());
  require_dim(x_star, dimension());
  double total = 0.0;
  for (Index k = 0; k < workers(); ++k) total += local(k).excess(block(x, k), block(x_star, k));
  return total;
}

std::optional<QuadraticForm> LiftedObjective::quadratic_form() const {
  const Index p = dimension();
  QuadraticForm q{Matrix::Zero(p, p), Vector::Zero(p), 0.0};
  for (Index k = 0; k < workers(); ++k) {
    auto local_q = local(k).quadratic_form();
    if (!local_q) return std::nullopt;
    q.c.block(k * block_dim_, k * block_dim_, block_dim_, block_dim_) = local_q->c;
    q.g.segment(k * block_dim_, block_dim_) = local_q->g;
    q.k += local_q->k;
  }
  return q;
}

double LiftedObjective::atom_smoothness() const {
  double l = 0.0;
  for (const auto& f : locals_) l = std::max(l, f->atom_smoothness());
  return l;
}

double LiftedObjective::full_smoothness() const {
  double l = 0.0;
  for (const auto& f : locals_) l = std::max(l, f->full_smoothness());
  return l;
}

double LiftedObjective::strong_convexity() const {
  double mu = std::numeric_limits<double>::infinity();
  for (const auto& f : locals_) mu = std::min(mu, f->strong_convexity());
  return mu;
}

bool LiftedObjective::has_analytic_smoothness() const {
  return std::all_of(locals_.begin(), locals_.end(),
                     [](const auto& f) { return f->has_analytic_smoothness(); });
}

}  // namespace dpsolve
