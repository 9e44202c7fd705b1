#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "coregmm/errors.hpp"

namespace coregmm {

inline constexpr double kEigenFloor = 1e-8;

namespace detail {

inline bool all_finite(const Eigen::MatrixXd& m) {
  return m.allFinite();
}

}  // namespace detail

// Symmetric matrix repaired to be positive definite: eigenvalues below the
// floor are clamped up to it, so the inverse and log-determinant always
// exist. Caches the eigendecomposition; callers read eigenvalues, inverse,
// and log_det without re-factorizing.
class PsdMatrix {
 public:
  explicit PsdMatrix(const Eigen::MatrixXd& entries, double eigen_floor = kEigenFloor)
      : eigen_floor_(eigen_floor) {
    if (entries.rows() != entries.cols() || entries.rows() < 1) {
      throw DimensionMismatch("PsdMatrix: matrix must be square and non-empty");
    }
    if (!detail::all_finite(entries)) {
      throw NotPositiveDefinite("PsdMatrix: non-finite entries");
    }
    const double scale = std::max(1.0, entries.cwiseAbs().maxCoeff());
    if ((entries - entries.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw NotPositiveDefinite("PsdMatrix: input not symmetric");
    }
    Eigen::MatrixXd sym = 0.5 * (entries + entries.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
      throw NotPositiveDefinite("PsdMatrix: eigendecomposition failed");
    }
    eigenvalues_ = es.eigenvalues().cwiseMax(eigen_floor_);
    eigenvectors_ = es.eigenvectors();
    matrix_ = eigenvectors_ * eigenvalues_.asDiagonal() * eigenvectors_.transpose();
    matrix_ = 0.5 * (matrix_ + matrix_.transpose());
    inverse_ = eigenvectors_ * eigenvalues_.cwiseInverse().asDiagonal() *
               eigenvectors_.transpose();
    inverse_ = 0.5 * (inverse_ + inverse_.transpose());
    log_det_ = eigenvalues_.array().log().sum();
  }

  int dim() const { return static_cast<int>(matrix_.rows()); }
  double eigen_floor() const { return eigen_floor_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::MatrixXd& inverse() const { return inverse_; }
  // Eigenvalues ascending, already clamped.
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  double min_eigenvalue() const { return eigenvalues_[0]; }
  double max_eigenvalue() const { return eigenvalues_[eigenvalues_.size() - 1]; }
  double log_det() const { return log_det_; }

 private:
  double eigen_floor_;
  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd inverse_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  double log_det_;
};

// Lower-triangular A with AᵀA = M. Standard LLᵀ gives the transposed
// orientation, so factor the index-reversed matrix and flip back: with J the
// anti-identity, JMJ = UᵀU yields A = JUJ, which is lower-triangular and
// satisfies AᵀA = J UᵀU J = M.
inline Eigen::MatrixXd cholesky(const PsdMatrix& m) {
  const int d = m.dim();
  Eigen::MatrixXd rev(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      rev(i, j) = m.matrix()(d - 1 - i, d - 1 - j);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(rev);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("cholesky: factorization failed after clamping");
  }
  Eigen::MatrixXd u = llt.matrixU();
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      a(i, j) = u(d - 1 - i, d - 1 - j);
    }
  }
  return a;
}

// Affine subspace of R^D spanned by j orthonormal columns (0 ≤ j ≤ D−1)
// translated to pass through `offset`. j = 0 encodes a single point.
class AffineSubspace {
 public:
  AffineSubspace(Eigen::MatrixXd basis, Eigen::VectorXd offset)
      : basis_(std::move(basis)), offset_(std::move(offset)) {
    const Eigen::Index dd = offset_.size();
    if (dd < 1) throw DimensionMismatch("AffineSubspace: offset must be non-empty");
    if (basis_.size() == 0) basis_.resize(dd, 0);
    if (basis_.rows() != dd) {
      throw DimensionMismatch("AffineSubspace: basis rows must match offset size");
    }
    if (basis_.cols() >= dd) {
      throw DimensionMismatch("AffineSubspace: subspace dimension must be < ambient");
    }
    if (basis_.cols() > 0) {
      Eigen::MatrixXd gram = basis_.transpose() * basis_;
      gram -= Eigen::MatrixXd::Identity(basis_.cols(), basis_.cols());
      if (gram.cwiseAbs().maxCoeff() > 1e-10) {
        throw Error("AffineSubspace: basis not orthonormal");
      }
    }
  }

  static AffineSubspace point(Eigen::VectorXd offset) {
    Eigen::MatrixXd empty(offset.size(), 0);
    return AffineSubspace(std::move(empty), std::move(offset));
  }

  int ambient_dim() const { return static_cast<int>(offset_.size()); }
  int dim() const { return static_cast<int>(basis_.cols()); }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& offset() const { return offset_; }

  // Orthogonal projection of p onto the subspace.
  Eigen::VectorXd project(const Eigen::VectorXd& p) const {
    Eigen::VectorXd r = p - offset_;
    if (basis_.cols() == 0) return offset_;
    return offset_ + basis_ * (basis_.transpose() * r);
  }

 private:
  Eigen::MatrixXd basis_;
  Eigen::VectorXd offset_;
};

inline double dist_to_subspace(const Eigen::VectorXd& p, const AffineSubspace& s) {
  if (p.size() != s.ambient_dim()) {
    throw DimensionMismatch("dist_to_subspace: point/subspace ambient mismatch");
  }
  Eigen::VectorXd r = p - s.offset();
  if (s.dim() > 0) r -= s.basis() * (s.basis().transpose() * r);
  return r.norm();
}

// Orthonormal basis of the orthogonal complement of col(U) in R^D, via full
// QR. U itself need not be orthonormal; only its column span matters.
inline Eigen::MatrixXd orthonormal_complement(const Eigen::MatrixXd& u) {
  const Eigen::Index dd = u.rows();
  const Eigen::Index r = u.cols();
  if (r == 0) return Eigen::MatrixXd::Identity(dd, dd);
  if (r >= dd) return Eigen::MatrixXd(dd, 0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(u);
  Eigen::MatrixXd q = qr.householderQ();
  return q.rightCols(dd - r);
}

}  // namespace coregmm
