#pragma once

#include <Eigen/Dense>
#include <vector>

#include "coregmm/gmm.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"
#include "coregmm/rng.hpp"

namespace testutil {

inline Eigen::VectorXd random_vector(coregmm::Rng& rng, int d, double lo, double hi) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

inline Eigen::MatrixXd random_gaussian_matrix(coregmm::Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Random D x j matrix with orthonormal columns (Haar-ish via QR of a
// Gaussian matrix; good enough for test coverage, not for statistics).
inline Eigen::MatrixXd random_orthonormal(coregmm::Rng& rng, int d, int j) {
  Eigen::MatrixXd g = random_gaussian_matrix(rng, d, j);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  return q.leftCols(j);
}

// SPD with spectrum bounded away from zero: BᵀB + ridge·I.
inline Eigen::MatrixXd random_spd(coregmm::Rng& rng, int d, double ridge = 0.1) {
  Eigen::MatrixXd b = random_gaussian_matrix(rng, d, d);
  return b.transpose() * b + ridge * Eigen::MatrixXd::Identity(d, d);
}

inline coregmm::AffineSubspace random_subspace(coregmm::Rng& rng, int d, int j,
                                               double off_lo = -2.0, double off_hi = 2.0) {
  return coregmm::AffineSubspace(random_orthonormal(rng, d, j),
                                 random_vector(rng, d, off_lo, off_hi));
}

inline coregmm::WeightedPointSet random_point_set(coregmm::Rng& rng, int n, int d,
                                                  double lo = -1.0, double hi = 1.0) {
  return coregmm::WeightedPointSet::with_unit_weights(
      [&] {
        Eigen::MatrixXd pts(n, d);
        for (int i = 0; i < n; ++i) pts.row(i) = random_vector(rng, d, lo, hi).transpose();
        return pts;
      }());
}

inline coregmm::GmmModel random_gmm(int k, int d, std::uint64_t seed) {
  coregmm::Rng rng(seed);
  std::vector<coregmm::GmmComponent> comps;
  comps.reserve(k);
  double total = 0.0;
  std::vector<double> w(k);
  for (int i = 0; i < k; ++i) {
    w[i] = rng.uniform(0.5, 2.0);
    total += w[i];
  }
  for (int i = 0; i < k; ++i) {
    comps.emplace_back(w[i] / total, random_vector(rng, d, -5.0, 5.0),
                       coregmm::PsdMatrix(random_spd(rng, d)));
  }
  return coregmm::GmmModel(std::move(comps));
}

}  // namespace testutil
