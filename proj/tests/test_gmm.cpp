#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/smm.hpp"
#include "helpers.hpp"

using namespace coregmm;

namespace {

GmmModel unit_gaussian_1d() {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(1, 1);
  return GmmModel({GmmComponent(1.0, mu, PsdMatrix(sigma))});
}

GmmModel random_model(Rng& rng, int k, int d, double eig_lo = 0.3, double eig_hi = 3.0) {
  std::vector<GmmComponent> comps;
  Eigen::VectorXd w(k);
  for (int i = 0; i < k; ++i) w[i] = rng.uniform(0.2, 1.0);
  w /= w.sum();
  for (int i = 0; i < k; ++i) {
    Eigen::MatrixXd q = testutil::random_orthonormal(rng, d, d);
    Eigen::VectorXd eig(d);
    for (int j = 0; j < d; ++j) eig[j] = rng.uniform(eig_lo, eig_hi);
    Eigen::MatrixXd sigma = q * eig.asDiagonal() * q.transpose();
    comps.emplace_back(w[i], testutil::random_vector(rng, d, -3.0, 3.0),
                       PsdMatrix(0.5 * (sigma + sigma.transpose())));
  }
  return GmmModel(std::move(comps));
}

// Densities summed directly, no max-shift; only valid at benign scales.
double naive_nll(const WeightedPointSet& p, const GmmModel& theta) {
  double total = 0.0;
  for (int r = 0; r < p.size(); ++r) {
    double density = 0.0;
    for (int i = 0; i < theta.k(); ++i) {
      const auto& c = theta.component(i);
      Eigen::VectorXd diff = p.point(r) - c.mean;
      double maha = diff.dot(c.covariance.inverse() * diff);
      double det = std::pow(2.0 * std::numbers::pi, theta.dim()) *
                   std::exp(c.covariance.log_det());
      density += c.weight * std::exp(-0.5 * maha) / std::sqrt(det);
    }
    total += p.weight(r) * -std::log(density);
  }
  return total;
}

SmmModel random_smm(Rng& rng, int k, int ambient) {
  Eigen::VectorXd w(k);
  for (int i = 0; i < k; ++i) w[i] = rng.uniform(0.2, 1.0);
  w /= w.sum();
  std::vector<AffineSubspace> subs;
  for (int i = 0; i < k; ++i) {
    int j = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ambient - 1)));
    subs.push_back(testutil::random_subspace(rng, ambient, j));
  }
  return SmmModel(rng.uniform(0.1, 5.0), w, std::move(subs));
}

}  // namespace

TEST_CASE("GmmModel validates its invariants", "[gmm]") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
  PsdMatrix id2(Eigen::MatrixXd::Identity(2, 2));
  SECTION("weights must sum to 1") {
    REQUIRE_THROWS_AS(GmmModel({GmmComponent(0.5, mu, id2), GmmComponent(0.4, mu, id2)}),
                      Error);
  }
  SECTION("weight above 1 rejected") {
    REQUIRE_THROWS(GmmComponent(1.5, mu, id2));
  }
  SECTION("dimension agreement enforced") {
    Eigen::VectorXd mu3 = Eigen::VectorXd::Zero(3);
    PsdMatrix id3(Eigen::MatrixXd::Identity(3, 3));
    REQUIRE_THROWS_AS(GmmModel({GmmComponent(0.5, mu, id2), GmmComponent(0.5, mu3, id3)}),
                      DimensionMismatch);
  }
  SECTION("eigen lower bound decides family membership") {
    Eigen::MatrixXd s(2, 2);
    s << 0.5, 0, 0, 2.0;
    GmmModel m({GmmComponent(1.0, mu, PsdMatrix(s))});
    REQUIRE(m.eigen_lower_bound() == Catch::Approx(0.5));
    PhiConfig cfg(0.01);
    REQUIRE(m.eigen_lower_bound() >= cfg.xi_prime());
  }
}

TEST_CASE("neg_log_likelihood matches closed forms and naive oracle", "[gmm]") {
  GmmModel unit = unit_gaussian_1d();
  Eigen::MatrixXd origin(1, 1);
  origin << 0.0;
  WeightedPointSet p0 = WeightedPointSet::with_unit_weights(origin);

  SECTION("density at the mean of a unit Gaussian") {
    REQUIRE(neg_log_likelihood(p0, unit) ==
            Catch::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  }
  SECTION("one standard deviation away adds one half") {
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    WeightedPointSet p1 = WeightedPointSet::with_unit_weights(one);
    REQUIRE(neg_log_likelihood(p1, unit) ==
            Catch::Approx(0.5 * std::log(2.0 * std::numbers::pi) + 0.5).epsilon(1e-12));
  }
  SECTION("log-sum-exp agrees with naive evaluation at benign scales") {
    Rng rng(101);
    for (int rep = 0; rep < 10; ++rep) {
      GmmModel theta = random_model(rng, 2, 3);
      WeightedPointSet p = testutil::random_point_set(rng, 20, 3, -4.0, 4.0);
      double fast = neg_log_likelihood(p, theta);
      double slow = naive_nll(p, theta);
      REQUIRE(fast == Catch::Approx(slow).epsilon(1e-9));
    }
  }
  SECTION("far points do not overflow") {
    Eigen::MatrixXd far(1, 1);
    far << 1e4;
    WeightedPointSet pf = WeightedPointSet::with_unit_weights(far);
    double v = neg_log_likelihood(pf, unit);
    REQUIRE(std::isfinite(v));
    REQUIRE(v == Catch::Approx(0.5 * std::log(2.0 * std::numbers::pi) + 0.5e8));
  }
  SECTION("dimension mismatch throws") {
    Eigen::MatrixXd p2 = Eigen::MatrixXd::Zero(1, 2);
    REQUIRE_THROWS_AS(neg_log_likelihood(WeightedPointSet::with_unit_weights(p2), unit),
                      DimensionMismatch);
  }
}

TEST_CASE("z_normalizer computes Z and the reweighted mixture", "[gmm]") {
  SECTION("single unit component at xi = 0") {
    ZNormalizer zn = z_normalizer(unit_gaussian_1d(), PhiConfig(0.0));
    REQUIRE(zn.z == Catch::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-12));
    REQUIRE(zn.omega_prime.size() == 1);
    REQUIRE(zn.omega_prime[0] == Catch::Approx(1.0));
  }
  SECTION("cancellation at the Z = 1 boundary") {
    double e2 = std::exp(2.0);
    Eigen::MatrixXd sigma(1, 1);
    sigma << e2 / (2.0 * std::numbers::pi);
    GmmModel m({GmmComponent(1.0, Eigen::VectorXd::Zero(1), PsdMatrix(sigma))});
    ZNormalizer zn = z_normalizer(m, PhiConfig(1.0));
    REQUIRE(zn.z == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("omega_prime sums to one") {
    Rng rng(103);
    for (int rep = 0; rep < 20; ++rep) {
      GmmModel theta = random_model(rng, 3, 2);
      ZNormalizer zn = z_normalizer(theta, PhiConfig(0.01));
      REQUIRE(std::abs(zn.omega_prime.sum() - 1.0) <= 1e-12);
    }
  }
  SECTION("Z at most 1 whenever all eigenvalues clear xi_prime") {
    Rng rng(107);
    PhiConfig cfg(0.01);
    for (int rep = 0; rep < 30; ++rep) {
      int d = 2 + static_cast<int>(rng.uniform_int(3));
      int k = 1 + static_cast<int>(rng.uniform_int(3));
      Eigen::VectorXd w(k);
      for (int i = 0; i < k; ++i) w[i] = rng.uniform(0.2, 1.0);
      w /= w.sum();
      std::vector<GmmComponent> comps;
      for (int i = 0; i < k; ++i) {
        Eigen::MatrixXd q = testutil::random_orthonormal(rng, d, d);
        Eigen::VectorXd eig(d);
        for (int j = 0; j < d; ++j) {
          eig[j] = cfg.xi_prime() * (rep == 0 ? 1.0 : rng.uniform(1.0, 4.0));
        }
        Eigen::MatrixXd sigma = q * eig.asDiagonal() * q.transpose();
        comps.emplace_back(w[i], Eigen::VectorXd::Zero(d),
                           PsdMatrix(0.5 * (sigma + sigma.transpose())));
      }
      GmmModel theta(std::move(comps));
      REQUIRE(theta.eigen_lower_bound() >= cfg.xi_prime() * (1.0 - 1e-12));
      REQUIRE(z_normalizer(theta, cfg).z <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("phi_cost closed forms, positivity, and the likelihood identity", "[gmm]") {
  SECTION("single unit component at its mean") {
    GmmModel unit = unit_gaussian_1d();
    Eigen::MatrixXd origin = Eigen::MatrixXd::Zero(1, 1);
    WeightedPointSet p = WeightedPointSet::with_unit_weights(origin);
    REQUIRE(phi_cost(p, unit, PhiConfig(0.5)) == Catch::Approx(0.5).epsilon(1e-12));
  }
  SECTION("identity between L, Z and phi on random instances") {
    Rng rng(109);
    for (int rep = 0; rep < 25; ++rep) {
      int k = 1 + static_cast<int>(rng.uniform_int(3));
      int d = 1 + static_cast<int>(rng.uniform_int(3));
      GmmModel theta = random_model(rng, k, d);
      int n = 5 + static_cast<int>(rng.uniform_int(40));
      Eigen::MatrixXd pts(n, d);
      Eigen::VectorXd w(n);
      for (int i = 0; i < n; ++i) {
        pts.row(i) = testutil::random_vector(rng, d, -5.0, 5.0).transpose();
        w[i] = rng.uniform(0.1, 3.0);
      }
      WeightedPointSet p(pts, w);
      PhiConfig cfg(rng.uniform(0.001, 1.0));
      double lhs = neg_log_likelihood(p, theta);
      double rhs = -p.total_weight() * z_normalizer(theta, cfg).log_z +
                   phi_cost(p, theta, cfg);
      REQUIRE(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(lhs)));
    }
  }
  SECTION("per-point phi is non-negative and matches the direct formula") {
    Rng rng(113);
    GmmModel theta = random_model(rng, 3, 2);
    PhiConfig cfg(0.01);
    ZNormalizer zn = z_normalizer(theta, cfg);
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd p = testutil::random_vector(rng, 2, -6.0, 6.0);
      double direct = 0.0;
      for (int i = 0; i < theta.k(); ++i) {
        direct += zn.omega_prime[i] * std::exp(-0.5 * theta.mahalanobis(i, p) - cfg.xi);
      }
      direct = -std::log(direct);
      double phi = phi_point_cost(p, theta, cfg, zn);
      REQUIRE(phi >= 0.0);
      REQUIRE(phi == Catch::Approx(direct).epsilon(1e-9));
    }
  }
}

TEST_CASE("smm_cost closed forms", "[gmm]") {
  Eigen::MatrixXd b(3, 1);
  b << 1, 0, 0;
  AffineSubspace line(b, Eigen::VectorXd::Zero(3));
  Eigen::VectorXd w1 = Eigen::VectorXd::Ones(1);

  SECTION("point on the subspace costs zero") {
    SmmModel y(1.0, w1, {line});
    Eigen::VectorXd p(3);
    p << 5, 0, 0;
    REQUIRE(smm_cost(p, y) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("single term is W times squared distance") {
    SmmModel y(2.0, w1, {line});
    Eigen::VectorXd p(3);
    p << 7, 1, 0;
    REQUIRE(smm_cost(p, y) == Catch::Approx(2.0).epsilon(1e-12));
  }
  SECTION("dominated far term leaves ln 2") {
    Eigen::MatrixXd b2(3, 1);
    b2 << 0, 1, 0;
    Eigen::VectorXd off(3);
    off << 0, 0, 100;
    AffineSubspace far_line(b2, off);
    Eigen::VectorXd w2(2);
    w2 << 0.5, 0.5;
    SmmModel y(1.0, w2, {line, far_line});
    Eigen::VectorXd p(3);
    p << 1, 0, 0;
    double direct = -std::log(0.5 * std::exp(0.0) + 0.5 * std::exp(-100.0 * 100.0));
    REQUIRE(smm_cost(p, y) == Catch::Approx(std::log(2.0)).epsilon(1e-9));
    REQUIRE(smm_cost(p, y) == Catch::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("cost_inf and dist_inf are maxima with the transfer inequality", "[gmm]") {
  SECTION("singleton reduces to pointwise cost") {
    Rng rng(127);
    SmmModel y = random_smm(rng, 2, 4);
    Eigen::MatrixXd pt(1, 4);
    pt << 1, 2, 3, 4;
    WeightedPointSet p = WeightedPointSet::with_unit_weights(pt);
    REQUIRE(cost_inf(p, y) == Catch::Approx(smm_cost(p.point(0), y)));
  }
  SECTION("two points against one subspace") {
    Eigen::MatrixXd b(2, 1);
    b << 1, 0;
    AffineSubspace axis(b, Eigen::VectorXd::Zero(2));
    SmmModel y(1.0, Eigen::VectorXd::Ones(1), {axis});
    Eigen::MatrixXd pts(2, 2);
    pts << 0, 1, 0, 2;
    WeightedPointSet p = WeightedPointSet::with_unit_weights(pts);
    REQUIRE(cost_inf(p, y) == Catch::Approx(4.0));
    REQUIRE(dist_inf(p, y.subspaces()) == Catch::Approx(2.0));
  }
  SECTION("cost_inf dominates W times dist_inf squared") {
    Rng rng(131);
    for (int rep = 0; rep < 100; ++rep) {
      int k = 1 + static_cast<int>(rng.uniform_int(3));
      SmmModel y = random_smm(rng, k, 4);
      WeightedPointSet p = testutil::random_point_set(rng, 12, 4, -4.0, 4.0);
      double ci = cost_inf(p, y);
      double di = dist_inf(p, y.subspaces());
      REQUIRE(ci >= y.w() * di * di - 1e-9);
    }
  }
  SECTION("empty set throws") {
    Rng rng(137);
    SmmModel y = random_smm(rng, 1, 3);
    REQUIRE_THROWS_AS(cost_inf(WeightedPointSet(), y), EmptySet);
    REQUIRE_THROWS_AS(dist_inf(WeightedPointSet(), y.subspaces()), EmptySet);
  }
}

TEST_CASE("linf_cost_bound exposes the transfer constant", "[gmm]") {
  REQUIRE(linf_cost_bound(1, 2.0) == Catch::Approx(4.0 * std::numbers::e));
  REQUIRE(linf_cost_bound(3, 0.01) ==
          Catch::Approx(2.0 * std::numbers::e * (1.0 + 600.0)));
  REQUIRE_THROWS_AS(linf_cost_bound(0, 1.0), InvalidRange);
  REQUIRE_THROWS_AS(linf_cost_bound(1, 0.0), InvalidRange);
}

TEST_CASE("embedding pads with d+1 zeros and strips back", "[gmm]") {
  Rng rng(139);
  WeightedPointSet p = testutil::random_point_set(rng, 6, 3);
  WeightedPointSet q = embed_set(p);
  REQUIRE(q.dim() == 7);
  REQUIRE(q.points().rightCols(4).cwiseAbs().maxCoeff() == 0.0);
  WeightedPointSet back = strip_embedding(q, 3);
  REQUIRE((back.points() - p.points()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.weights() - p.weights()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lift reproduces the surrogate cost and keeps the floor", "[gmm]") {
  SECTION("hand-checked one-dimensional lift") {
    GmmModel unit = unit_gaussian_1d();
    PhiConfig cfg(0.1);
    LiftWitness lw = lift_to_smm(unit, cfg);
    REQUIRE(lw.smm.w() == Catch::Approx(0.5));
    REQUIRE(lw.axis_offset == Catch::Approx(std::sqrt(0.1 / 0.5)));
    REQUIRE(lw.a[0](0, 0) == Catch::Approx(1.0));

    Eigen::VectorXd p(1);
    p << 2.0;
    Eigen::MatrixXd pm(1, 1);
    pm << 2.0;
    WeightedPointSet ps = WeightedPointSet::with_unit_weights(pm);
    double phi = phi_cost(ps, unit, cfg);
    REQUIRE(phi == Catch::Approx(2.1).epsilon(1e-12));
    REQUIRE(smm_cost(lw.embed(p), lw.smm) == Catch::Approx(2.1).epsilon(1e-10));
  }
  SECTION("embedded component means sit exactly at the floor") {
    Rng rng(149);
    GmmModel theta = random_model(rng, 3, 2);
    PhiConfig cfg(0.01);
    LiftWitness lw = lift_to_smm(theta, cfg);
    for (int i = 0; i < theta.k(); ++i) {
      double d = dist_to_subspace(lw.embed(theta.component(i).mean), lw.smm.subspace(i));
      REQUIRE(lw.smm.w() * d * d == Catch::Approx(cfg.xi).epsilon(1e-10));
    }
  }
  SECTION("random models match phi to 1e-8 relative with the floor held") {
    Rng rng(151);
    for (int rep = 0; rep < 10; ++rep) {
      GmmModel theta = random_model(rng, 2, 3);
      PhiConfig cfg(0.05);
      LiftWitness lw = lift_to_smm(theta, cfg);
      ZNormalizer zn = z_normalizer(theta, cfg);
      for (const auto& a : lw.a) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
        REQUIRE(svd.singularValues().maxCoeff() <= 1.0 + 1e-12);
      }
      for (int t = 0; t < 30; ++t) {
        Eigen::VectorXd p = testutil::random_vector(rng, 3, -6.0, 6.0);
        double phi = phi_point_cost(p, theta, cfg, zn);
        double cost = smm_cost(lw.embed(p), lw.smm);
        REQUIRE(std::abs(phi - cost) <= 1e-8 * (1.0 + std::abs(phi)));
        double dmin = dist_to_subspace_set(lw.embed(p), lw.smm.subspaces());
        REQUIRE(lw.smm.w() * dmin * dmin >= cfg.xi - 1e-10);
      }
    }
  }
  SECTION("xi must be strictly positive for the lift") {
    REQUIRE_THROWS_AS(lift_to_smm(unit_gaussian_1d(), PhiConfig(0.0)), InvalidRange);
  }
}
