#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"

namespace coregmm {

// Subspace mixture model: scale W and k affine subspaces with mixture
// weights. Geometric stand-in for a GMM whose quadratic forms have been
// absorbed into subspace distances.
class SmmModel {
 public:
  SmmModel(double w, Eigen::VectorXd mixture_weights, std::vector<AffineSubspace> subspaces)
      : w_(w), weights_(std::move(mixture_weights)), subspaces_(std::move(subspaces)) {
    if (!(w_ > 0.0)) throw InvalidRange("SmmModel: W must be > 0");
    if (subspaces_.empty()) throw EmptySet("SmmModel: needs at least one subspace");
    if (weights_.size() != static_cast<Eigen::Index>(subspaces_.size())) {
      throw DimensionMismatch("SmmModel: weights/subspaces length mismatch");
    }
    for (Eigen::Index i = 0; i < weights_.size(); ++i) {
      if (!(weights_[i] > 0.0)) throw NonPositiveWeight("SmmModel: weight must be > 0");
    }
    if (std::abs(weights_.sum() - 1.0) > 1e-10) {
      throw Error("SmmModel: mixture weights must sum to 1");
    }
    const int ambient = subspaces_[0].ambient_dim();
    for (const auto& s : subspaces_) {
      if (s.ambient_dim() != ambient) {
        throw DimensionMismatch("SmmModel: subspaces disagree on ambient dimension");
      }
    }
  }

  double w() const { return w_; }
  int k() const { return static_cast<int>(subspaces_.size()); }
  int ambient_dim() const { return subspaces_[0].ambient_dim(); }
  double weight(int i) const { return weights_[i]; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const AffineSubspace& subspace(int i) const { return subspaces_[i]; }
  const std::vector<AffineSubspace>& subspaces() const { return subspaces_; }

 private:
  double w_;
  Eigen::VectorXd weights_;
  std::vector<AffineSubspace> subspaces_;
};

// cost(p,y) = −ln Σ_i ω_i exp(−W·dist²(p,S_i)), via max-shifted summation.
inline double smm_cost(const Eigen::VectorXd& p, const SmmModel& y) {
  if (p.size() != y.ambient_dim()) {
    throw DimensionMismatch("smm_cost: point/model ambient mismatch");
  }
  Eigen::VectorXd e(y.k());
  for (int i = 0; i < y.k(); ++i) {
    double d = dist_to_subspace(p, y.subspace(i));
    e[i] = std::log(y.weight(i)) - y.w() * d * d;
  }
  return -detail::log_sum_exp(e);
}

// Worst-case cost over the set; weights play no role under the ℓ∞ loss.
inline double cost_inf(const WeightedPointSet& p, const SmmModel& y) {
  if (p.empty()) throw EmptySet("cost_inf: empty set");
  double worst = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < p.size(); ++r) {
    worst = std::max(worst, smm_cost(p.point(r), y));
  }
  return worst;
}

// dist(p, {S_1..S_k}) = min_i dist(p, S_i); dist_inf is its max over P.
inline double dist_to_subspace_set(const Eigen::VectorXd& p,
                                   const std::vector<AffineSubspace>& s) {
  if (s.empty()) throw EmptySet("dist_to_subspace_set: no subspaces");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sub : s) best = std::min(best, dist_to_subspace(p, sub));
  return best;
}

inline double dist_inf(const WeightedPointSet& p, const std::vector<AffineSubspace>& s) {
  if (p.empty()) throw EmptySet("dist_inf: empty set");
  double worst = 0.0;
  for (int r = 0; r < p.size(); ++r) {
    worst = std::max(worst, dist_to_subspace_set(p.point(r), s));
  }
  return worst;
}

// Explicit constant of the max-distance → max-cost coreset transfer:
// an ε/h(k) distance coreset is an ε cost coreset, h(k) ≤ 2e(1 + 2k/ξ).
inline double linf_cost_bound(int k, double xi) {
  if (k < 1) throw InvalidRange("linf_cost_bound: k must be >= 1");
  if (!(xi > 0.0)) throw InvalidRange("linf_cost_bound: xi must be > 0");
  return 2.0 * std::numbers::e * (1.0 + 2.0 * k / xi);
}

// p ↦ (pᵀ | 0,…,0)ᵀ ∈ R^{2d+1}: pad with d+1 zeros.
inline Eigen::VectorXd embed_point(const Eigen::VectorXd& p) {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(2 * p.size() + 1);
  q.head(p.size()) = p;
  return q;
}

inline WeightedPointSet embed_set(const WeightedPointSet& p) {
  if (p.empty()) throw EmptySet("embed_set: empty set");
  const int d = p.dim();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p.size(), 2 * d + 1);
  q.leftCols(d) = p.points();
  return WeightedPointSet(std::move(q), p.weights());
}

// Inverse of embed_set on its image: keep the first d coordinates.
inline WeightedPointSet strip_embedding(const WeightedPointSet& p, int d) {
  if (p.empty()) throw EmptySet("strip_embedding: empty set");
  if (p.dim() != 2 * d + 1) {
    throw DimensionMismatch("strip_embedding: set is not a d-embedding");
  }
  Eigen::MatrixXd q = p.points().leftCols(d);
  return WeightedPointSet(std::move(q), p.weights());
}

// GMM → SMM lift. The mixture's quadratic forms become subspace distances:
// with AᵢᵀAᵢ = Σᵢ⁻¹/(2W) and W = maxᵢ λ_max(Σᵢ⁻¹)/2 (so ‖Aᵢ‖₂ ≤ 1), the
// subspace Sᵢ ⊂ R^{2d+1} is built so that for the zero-padded p′,
//   W·dist²(p′,Sᵢ) = ½(p−μᵢ)ᵀΣᵢ⁻¹(p−μᵢ) + ξ.
// Using the reweighted mixture ω′ as the SMM weights makes the SMM cost of
// p′ equal the surrogate φ_ξ({p},θ) exactly.
struct LiftWitness {
  SmmModel smm;
  double xi;
  // Per-component factors AᵢᵀAᵢ = Σᵢ⁻¹/(2W), each with spectral norm ≤ 1.
  std::vector<Eigen::MatrixXd> a;
  // Orthonormal 2d×d frames with UᵢᵀEᵢ = Aᵢ; their complements span Sᵢ.
  std::vector<Eigen::MatrixXd> u;
  // Eμᵢ = (μᵢᵀ | 0_d)ᵀ, the in-plane translation of Sᵢ.
  std::vector<Eigen::VectorXd> translation;
  // √(ξ/W): every embedded point keeps at least this offset along the extra
  // axis, which is what pins W·dist² ≥ ξ.
  double axis_offset;

  Eigen::VectorXd embed(const Eigen::VectorXd& p) const { return embed_point(p); }
};

inline LiftWitness lift_to_smm(const GmmModel& theta, const PhiConfig& cfg) {
  if (!(cfg.xi > 0.0)) throw InvalidRange("lift_to_smm: xi must be > 0");
  const int d = theta.dim();
  const int k = theta.k();

  double w = 0.0;
  for (int i = 0; i < k; ++i) {
    // λ_max(Σ⁻¹) = 1/λ_min(Σ); eigenvalues are cached in the PsdMatrix.
    w = std::max(w, 0.5 / theta.component(i).covariance.min_eigenvalue());
  }

  const double axis_offset = std::sqrt(cfg.xi / w);
  std::vector<Eigen::MatrixXd> a_all, u_all;
  std::vector<Eigen::VectorXd> translations;
  std::vector<AffineSubspace> subspaces;
  a_all.reserve(k);
  u_all.reserve(k);
  translations.reserve(k);
  subspaces.reserve(k);

  for (int i = 0; i < k; ++i) {
    const auto& comp = theta.component(i);
    PsdMatrix scaled(comp.covariance.inverse() / (2.0 * w));
    Eigen::MatrixXd a = cholesky(scaled);

    // Complete A to an orthonormal frame: with A = QDVᵀ and
    // L = Q·diag(√(1−σ²)), the stack U = [Aᵀ; Lᵀ] has UᵀU = AAᵀ + LLᵀ = I.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::VectorXd sv = svd.singularValues();
    Eigen::VectorXd comp_sv(d);
    for (int j = 0; j < d; ++j) comp_sv[j] = std::sqrt(std::max(0.0, 1.0 - sv[j] * sv[j]));
    Eigen::MatrixXd l = svd.matrixU() * comp_sv.asDiagonal() * svd.matrixU().transpose();

    Eigen::MatrixXd u(2 * d, d);
    u.topRows(d) = a.transpose();
    u.bottomRows(d) = l.transpose();

    Eigen::MatrixXd t = orthonormal_complement(u);

    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(2 * d + 1, d);
    basis.topRows(2 * d) = t;

    Eigen::VectorXd offset = Eigen::VectorXd::Zero(2 * d + 1);
    offset.head(d) = comp.mean;
    offset[2 * d] = axis_offset;

    Eigen::VectorXd translation = Eigen::VectorXd::Zero(2 * d);
    translation.head(d) = comp.mean;

    a_all.push_back(std::move(a));
    u_all.push_back(std::move(u));
    translations.push_back(std::move(translation));
    subspaces.emplace_back(std::move(basis), std::move(offset));
  }

  ZNormalizer zn = z_normalizer(theta, cfg);
  SmmModel smm(w, zn.omega_prime, std::move(subspaces));
  return LiftWitness{std::move(smm), cfg.xi,          std::move(a_all),
                     std::move(u_all), std::move(translations), axis_offset};
}

}  // namespace coregmm
