#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"

namespace coregmm {

namespace detail {

// max-shifted so far-away points underflow gracefully instead of to -inf.
inline double log_sum_exp(const Eigen::VectorXd& exponents) {
  double m = exponents.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < exponents.size(); ++i) acc += std::exp(exponents[i] - m);
  return m + std::log(acc);
}

}  // namespace detail

struct GmmComponent {
  double weight;
  Eigen::VectorXd mean;
  PsdMatrix covariance;

  GmmComponent(double w, Eigen::VectorXd mu, PsdMatrix sigma)
      : weight(w), mean(std::move(mu)), covariance(std::move(sigma)) {
    if (!(weight > 0.0) || weight > 1.0) {
      throw NonPositiveWeight("GmmComponent: weight must lie in (0,1]");
    }
    if (mean.size() != covariance.dim()) {
      throw DimensionMismatch("GmmComponent: mean/covariance dimension mismatch");
    }
  }
};

// Mixture of k Gaussians. Covariances are eigen-clamped on construction, so
// inverses and log-determinants always exist; per-component normalization
// constants are cached because every cost function touches all n points.
class GmmModel {
 public:
  explicit GmmModel(std::vector<GmmComponent> components)
      : components_(std::move(components)) {
    if (components_.empty()) throw EmptySet("GmmModel: needs at least one component");
    const int d = static_cast<int>(components_[0].mean.size());
    double wsum = 0.0;
    for (const auto& c : components_) {
      if (c.mean.size() != d) {
        throw DimensionMismatch("GmmModel: components disagree on dimension");
      }
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-10) {
      throw Error("GmmModel: mixture weights must sum to 1");
    }
    log_norm_.resize(components_.size());
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < components_.size(); ++i) {
      const auto& c = components_[i];
      log_norm_[i] = std::log(c.weight) - 0.5 * (d * log2pi + c.covariance.log_det());
    }
  }

  int k() const { return static_cast<int>(components_.size()); }
  int dim() const { return static_cast<int>(components_[0].mean.size()); }
  const std::vector<GmmComponent>& components() const { return components_; }
  const GmmComponent& component(int i) const { return components_[i]; }

  // ln ω_i − ½ ln det(2πΣ_i), the density log-prefactor of component i.
  double log_norm(int i) const { return log_norm_[i]; }

  double mahalanobis(int i, const Eigen::VectorXd& p) const {
    Eigen::VectorXd r = p - components_[i].mean;
    return r.dot(components_[i].covariance.inverse() * r);
  }

  // Smallest covariance eigenvalue across components; a model belongs to the
  // bounded family at level xi_prime iff this is >= xi_prime.
  double eigen_lower_bound() const {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& c : components_) lo = std::min(lo, c.covariance.min_eigenvalue());
    return lo;
  }

  // -ln of the mixture density at p.
  double point_nll(const Eigen::VectorXd& p) const {
    if (p.size() != dim()) throw DimensionMismatch("point_nll: dimension mismatch");
    Eigen::VectorXd e(k());
    for (int i = 0; i < k(); ++i) e[i] = log_norm_[i] - 0.5 * mahalanobis(i, p);
    return -detail::log_sum_exp(e);
  }

 private:
  std::vector<GmmComponent> components_;
  std::vector<double> log_norm_;
};

// Parameters of the surrogate cost: the shift ξ and the covariance
// eigenvalue bound ξ′ = e^ξ/(2π) below which the surrogate may disagree in
// sign with the true likelihood.
struct PhiConfig {
  double xi = 0.01;

  // ξ = 0 is admitted (the surrogate and Z are still well-defined there);
  // only the subspace lift needs ξ strictly positive and checks on its own.
  explicit PhiConfig(double xi_in = 0.01) : xi(xi_in) {
    if (!(xi >= 0.0)) throw InvalidRange("PhiConfig: xi must be >= 0");
  }

  double xi_prime() const { return std::exp(xi) / (2.0 * std::numbers::pi); }
};

inline double neg_log_likelihood(const WeightedPointSet& p, const GmmModel& theta) {
  if (p.empty()) return 0.0;
  if (p.dim() != theta.dim()) {
    throw DimensionMismatch("neg_log_likelihood: data/model dimension mismatch");
  }
  double total = 0.0;
  for (int r = 0; r < p.size(); ++r) {
    total += p.weight(r) * theta.point_nll(p.point(r));
  }
  return total;
}

// Z(θ) = Σ_i ω_i e^ξ / √(det 2πΣ_i) together with the reweighted mixture
// ω′_i = ω_i e^ξ / (Z √(det 2πΣ_i)), which always sums to 1.
struct ZNormalizer {
  double z;
  double log_z;
  Eigen::VectorXd omega_prime;
};

inline ZNormalizer z_normalizer(const GmmModel& theta, const PhiConfig& cfg) {
  Eigen::VectorXd e(theta.k());
  for (int i = 0; i < theta.k(); ++i) e[i] = theta.log_norm(i) + cfg.xi;
  double log_z = detail::log_sum_exp(e);
  Eigen::VectorXd omega_prime = (e.array() - log_z).exp();
  return ZNormalizer{std::exp(log_z), log_z, std::move(omega_prime)};
}

// Per-point surrogate: φ_ξ({p},θ) = −ln Σ_i ω′_i exp(−½ maha_i(p) − ξ).
// Non-negative for ξ ≥ 0 since every exponent is ≤ 0 and ω′ is a
// distribution.
inline double phi_point_cost(const Eigen::VectorXd& p, const GmmModel& theta,
                             const PhiConfig& cfg, const ZNormalizer& zn) {
  Eigen::VectorXd e(theta.k());
  for (int i = 0; i < theta.k(); ++i) {
    e[i] = std::log(zn.omega_prime[i]) - 0.5 * theta.mahalanobis(i, p) - cfg.xi;
  }
  return -detail::log_sum_exp(e);
}

// Weighted sum of per-point surrogates. Satisfies
//   L(P,θ) = −(Σ_p w(p))·ln Z(θ) + φ_ξ(P,θ)
// exactly in exact arithmetic; the cancellation is what makes φ a sampling-
// friendly stand-in for L.
inline double phi_cost(const WeightedPointSet& p, const GmmModel& theta,
                       const PhiConfig& cfg) {
  if (p.empty()) return 0.0;
  if (p.dim() != theta.dim()) {
    throw DimensionMismatch("phi_cost: data/model dimension mismatch");
  }
  ZNormalizer zn = z_normalizer(theta, cfg);
  double total = 0.0;
  for (int r = 0; r < p.size(); ++r) {
    total += p.weight(r) * phi_point_cost(p.point(r), theta, cfg, zn);
  }
  return total;
}

}  // namespace coregmm
