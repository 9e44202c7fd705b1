#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/points.hpp"
#include "coregmm/projclust.hpp"
#include "coregmm/rng.hpp"
#include "coregmm/sampler.hpp"
#include "coregmm/sensitivity.hpp"
#include "coregmm/smm.hpp"
#include "helpers.hpp"

using namespace coregmm;

namespace {

SensitivityMap make_map(std::vector<double> values) {
  SensitivityMap s;
  s.values = std::move(values);
  s.total = std::accumulate(s.values.begin(), s.values.end(), 0.0);
  return s;
}

WeightedPointSet grid_points_1d(int n, double weight = 1.0) {
  Eigen::MatrixXd pts(n, 1);
  for (int i = 0; i < n; ++i) pts(i, 0) = static_cast<double>(i);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, weight);
  return WeightedPointSet(pts, w);
}

}  // namespace

TEST_CASE("SamplerConfig validation", "[sampler]") {
  SamplerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SamplerConfig bad = cfg;
  bad.m = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
  bad = cfg;
  bad.vc_dimension = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
  bad = cfg;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
  bad = cfg;
  bad.epsilon = 1.0 + 1e-9;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
  bad = cfg;
  bad.delta = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
  bad = cfg;
  bad.c = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidRange);
}

TEST_CASE("advised_sample_size follows the pinned formula", "[sampler]") {
  SECTION("boundary arithmetic") {
    SamplerConfig cfg;
    cfg.epsilon = 1.0;  // admitted boundary so this exact case is expressible
    cfg.delta = 1.0 / std::numbers::e;
    cfg.vc_dimension = 1;
    cfg.c = 1.0;
    CHECK(advised_sample_size(0.0, cfg) == 2);  // ceil(ln 2 + 1)
  }

  SECTION("doubling the dimension doubles that term") {
    SamplerConfig cfg;
    cfg.epsilon = 0.5;
    cfg.delta = 0.25;
    cfg.vc_dimension = 3;
    const double t = 4.0;
    auto raw = [&](int dprime) {
      return cfg.c * (t + 1.0) / (cfg.epsilon * cfg.epsilon) *
             (dprime * std::log(t + 2.0) + std::log(1.0 / cfg.delta));
    };
    SamplerConfig twice = cfg;
    twice.vc_dimension = 6;
    CHECK(advised_sample_size(t, cfg) == static_cast<int>(std::ceil(raw(3))));
    CHECK(advised_sample_size(t, twice) == static_cast<int>(std::ceil(raw(6))));
    CHECK(raw(6) - raw(3) == Catch::Approx(cfg.c * (t + 1.0) / 0.25 * 3.0 * std::log(6.0)));
  }

  SECTION("independent evaluation") {
    SamplerConfig cfg;
    cfg.epsilon = 0.1;
    cfg.delta = 0.01;
    cfg.vc_dimension = 16;
    const double t = 10.0;
    const double expect = (t + 1.0) / 0.01 * (16.0 * std::log(12.0) + std::log(100.0));
    CHECK(advised_sample_size(t, cfg) == static_cast<int>(std::ceil(expect)));
  }

  SECTION("negative total rejected") {
    SamplerConfig cfg;
    CHECK_THROWS_AS(advised_sample_size(-1.0, cfg), InvalidRange);
  }
}

TEST_CASE("saturated sampling returns the input set", "[sampler]") {
  // n = 8 with unit weights and s = 7/8 makes every adjusted share exactly
  // 1/8 = 1/m: all points enter deterministically and no draws happen.
  auto p = grid_points_1d(8);
  auto s = make_map(std::vector<double>(8, 0.875));
  SamplerConfig cfg;
  cfg.m = 8;
  cfg.seed = 7;
  auto sample = importance_sample_indexed(p, s, cfg);
  REQUIRE(sample.indices.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(sample.indices[i] == i);
    CHECK(sample.raw_weights[i] == 1.0);
    CHECK(sample.weights[i] == Catch::Approx(1.0).epsilon(1e-14));
  }
  auto cs = importance_sample(p, s, cfg);
  CHECK(cs.size() == 8);
  CHECK(cs.total_weight() == Catch::Approx(8.0).epsilon(1e-13));
}

TEST_CASE("a dominant point is included deterministically", "[sampler]") {
  const int n = 5;
  auto p = grid_points_1d(n);
  auto s = make_map({500.0, 0.5, 0.5, 0.5, 0.5});
  SamplerConfig cfg;
  cfg.m = 10;
  cfg.seed = 3;
  auto sample = importance_sample_indexed(p, s, cfg);
  REQUIRE(!sample.indices.empty());
  REQUIRE(sample.indices[0] == 0);
  // Deterministic members carry their input weight before the rescale.
  CHECK(sample.raw_weights[0] == 1.0);
  CHECK(static_cast<int>(sample.indices.size()) <= 1 + cfg.m);
}

TEST_CASE("three-point threshold hand-trace", "[sampler]") {
  // Weights (1,1,2) and s = (1.75, 0.75, 0.5) give adjusted masses
  // (2, 1, 1), all exact in doubles: shares (1/2, 1/4, 1/4) at m = 2 put
  // point 0 in deterministically (1/2 >= 1/2) and leave {1,2} for two
  // draws at probability 1/2 each, so every draw contributes w(q) exactly.
  Eigen::MatrixXd pts(3, 1);
  pts << 0.0, 1.0, 2.0;
  Eigen::VectorXd w(3);
  w << 1.0, 1.0, 2.0;
  WeightedPointSet p(pts, w);
  auto s = make_map({1.75, 0.75, 0.5});
  SamplerConfig cfg;
  cfg.m = 2;

  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    cfg.seed = seed;
    auto sample = importance_sample_indexed(p, s, cfg);
    REQUIRE(!sample.indices.empty());
    CHECK(sample.indices[0] == 0);
    CHECK(sample.raw_weights[0] == 1.0);
    CHECK(static_cast<int>(sample.indices.size()) <= 3);
    double total = 0.0;
    for (std::size_t j = 0; j < sample.indices.size(); ++j) {
      const int idx = sample.indices[j];
      if (idx != 0) {
        // Each draw adds w(q)/(m * 1/2) = w(q); repeats stack.
        const double per = p.weight(idx);
        const double k = sample.raw_weights[j] / per;
        CHECK(k == Catch::Approx(std::round(k)).margin(1e-12));
        CHECK(k >= 1.0);
      }
      total += sample.weights[j];
    }
    CHECK(total == Catch::Approx(4.0).epsilon(1e-12));
  }
}

TEST_CASE("weight conservation, subset property, determinism", "[sampler]") {
  Rng data_rng(505);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5 + static_cast<int>(data_rng.uniform_int(60));
    Eigen::MatrixXd pts(n, 2);
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) {
      pts.row(i) = testutil::random_vector(data_rng, 2, -5.0, 5.0).transpose();
      w[i] = data_rng.uniform(0.1, 4.0);
    }
    WeightedPointSet p(pts, w);
    std::vector<double> sv(n);
    for (int i = 0; i < n; ++i) sv[i] = data_rng.uniform(0.0, 2.0);
    auto s = make_map(std::move(sv));

    SamplerConfig cfg;
    cfg.m = 1 + static_cast<int>(data_rng.uniform_int(2 * n));
    cfg.seed = derive_seed(808, {static_cast<std::uint64_t>(trial)});

    auto a = importance_sample_indexed(p, s, cfg);
    auto b = importance_sample_indexed(p, s, cfg);
    CHECK(a.indices == b.indices);
    CHECK(a.weights == b.weights);
    CHECK(a.raw_weights == b.raw_weights);

    CHECK(std::is_sorted(a.indices.begin(), a.indices.end()));
    CHECK(std::adjacent_find(a.indices.begin(), a.indices.end()) == a.indices.end());
    for (int idx : a.indices) {
      CHECK(idx >= 0);
      CHECK(idx < n);
    }
    for (double u : a.weights) CHECK(u > 0.0);

    const double total_u = std::accumulate(a.weights.begin(), a.weights.end(), 0.0);
    CHECK(std::abs(total_u - p.total_weight()) <= 1e-12 * p.total_weight());
  }
}

TEST_CASE("sampled pre-rescale weights are inverse-probability multiples", "[sampler]") {
  // Uniform weights and uniform s with m < n: nobody is deterministic, every
  // draw contributes exactly total_w / m, and merged repeats stack in integer
  // multiples of it. Per-draw values sit on the [w, total_w/m] bracket edge.
  const int n = 16;
  auto p = grid_points_1d(n, 2.0);
  auto s = make_map(std::vector<double>(n, 1.0));
  SamplerConfig cfg;
  cfg.m = 4;
  cfg.seed = 77;
  auto sample = importance_sample_indexed(p, s, cfg);
  const double per_draw = p.total_weight() / cfg.m;  // 8
  CHECK(static_cast<int>(sample.indices.size()) <= cfg.m);
  double draws = 0.0;
  for (double raw : sample.raw_weights) {
    const double k = raw / per_draw;
    CHECK(k == Catch::Approx(std::round(k)).margin(1e-12));
    CHECK(k >= 1.0);
    CHECK(per_draw >= p.weight(0));
    draws += std::round(k);
  }
  CHECK(draws == Catch::Approx(4.0));
}

TEST_CASE("sampler input validation", "[sampler]") {
  auto p = grid_points_1d(4);
  auto s = make_map({1.0, 1.0, 1.0, 1.0});
  SamplerConfig cfg;
  cfg.m = 2;
  CHECK_THROWS_AS(importance_sample_indexed(WeightedPointSet{}, s, cfg), EmptyInput);

  auto short_map = make_map({1.0, 1.0});
  CHECK_THROWS_AS(importance_sample_indexed(p, short_map, cfg), DimensionMismatch);

  auto negative = make_map({1.0, -0.5, 1.0, 1.0});
  CHECK_THROWS_AS(importance_sample_indexed(p, negative, cfg), InvalidRange);

  auto poisoned = make_map({1.0, std::numeric_limits<double>::quiet_NaN(), 1.0, 1.0});
  CHECK_THROWS_AS(importance_sample_indexed(p, poisoned, cfg), InvalidRange);
}

TEST_CASE("sampling is unbiased before the rescale", "[sampler]") {
  // Fixed 10-point instance; the deterministic member is excluded and the
  // remaining mass is estimated by the sampled pre-rescale weights. Monte
  // Carlo over 10^4 seeds must land within 3 standard errors.
  const int n = 10;
  Eigen::MatrixXd pts(n, 1);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    pts(i, 0) = static_cast<double>(i);
    w[i] = 1.0 + 0.25 * i;
  }
  WeightedPointSet p(pts, w);
  auto s = make_map({40.0, 2.0, 1.5, 1.0, 0.75, 0.5, 0.5, 0.25, 0.25, 0.25});
  SamplerConfig cfg;
  cfg.m = 6;

  std::vector<double> cost(n);
  for (int i = 0; i < n; ++i) cost[i] = 1.0 + 0.5 * i * i;

  // Identify the deterministic set once (it only depends on (p, s, m)).
  cfg.seed = 0;
  auto probe = importance_sample_indexed(p, s, cfg);
  std::vector<char> fixed(n, 0);
  for (std::size_t j = 0; j < probe.indices.size(); ++j) {
    if (probe.raw_weights[j] == w[probe.indices[j]]) fixed[probe.indices[j]] = 1;
  }
  REQUIRE(fixed[0] == 1);  // the heavy-sensitivity point saturates

  double target = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!fixed[i]) target += w[i] * cost[i];
  }

  const int reps = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    cfg.seed = derive_seed(0xabcdef, {static_cast<std::uint64_t>(r)});
    auto sample = importance_sample_indexed(p, s, cfg);
    double estimate = 0.0;
    for (std::size_t j = 0; j < sample.indices.size(); ++j) {
      const int idx = sample.indices[j];
      if (!fixed[idx]) estimate += sample.raw_weights[j] * cost[idx];
    }
    sum += estimate;
    sum_sq += estimate * estimate;
  }
  const double mean = sum / reps;
  const double var = std::max(0.0, sum_sq / reps - mean * mean);
  const double stderr_mean = std::sqrt(var / reps);
  CAPTURE(mean, target, stderr_mean);
  CHECK(std::abs(mean - target) <= 3.0 * stderr_mean);
}

TEST_CASE("sampled coresets track the surrogate cost", "[sampler]") {
  // Two separated 1-d Gaussian clusters, unweighted; sensitivities from the
  // peel over embedded points, then subsample and compare surrogate costs
  // on random mixture queries.
  Rng rng(909);
  const int n = 300;
  Eigen::MatrixXd pts(n, 1);
  for (int i = 0; i < n; ++i) {
    const bool left = i % 2 == 0;
    pts(i, 0) = (left ? -4.0 : 4.0) + rng.normal();
  }
  WeightedPointSet p = WeightedPointSet::with_unit_weights(pts);
  auto lifted = embed_set(p);

  GridConfig grid;
  grid.m = 100;
  LinfScheme scheme(LinfScheme::Kind::projective, 2, 1.0 / 3.0, grid);
  auto map = sensitivity_unweighted(lifted, 1.0 / 3.0, 0.1, scheme);

  const PhiConfig cfg{};
  auto query = [&](Rng& qrng) {
    Eigen::VectorXd m0(1), m1(1);
    m0 << qrng.uniform(-6.0, 6.0);
    m1 << qrng.uniform(-6.0, 6.0);
    Eigen::MatrixXd c0(1, 1), c1(1, 1);
    c0 << qrng.uniform(0.5, 3.0);
    c1 << qrng.uniform(0.5, 3.0);
    const double w0 = qrng.uniform(0.2, 0.8);
    return GmmModel({GmmComponent(w0, m0, PsdMatrix(c0)),
                     GmmComponent(1.0 - w0, m1, PsdMatrix(c1))});
  };

  SECTION("advised size saturates small instances") {
    SamplerConfig sc;
    sc.epsilon = 0.2;
    sc.delta = 0.1;
    sc.vc_dimension = 16;  // d^4 k^4 at d = 1, k = 2
    sc.m = advised_sample_size(map.total, sc);
    CHECK(sc.m >= n);  // theory constants dwarf desk-scale inputs
    sc.seed = 11;
    auto sample = importance_sample_indexed(lifted, map, sc);
    auto coreset = p.subset(sample.indices);
    Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(sample.weights.data(),
                                                          sample.weights.size());
    WeightedPointSet c(coreset.points(), u);

    Rng qrng(1001);
    int within = 0;
    const int queries = 100;
    for (int q = 0; q < queries; ++q) {
      GmmModel theta = query(qrng);
      const double full = phi_cost(p, theta, cfg);
      const double sub = phi_cost(c, theta, cfg);
      if (std::abs(full / sub - 1.0) <= 0.2) ++within;
    }
    CHECK(within >= 90);
  }

  SECTION("forced subsampling stays close") {
    SamplerConfig sc;
    sc.m = 60;
    sc.seed = 12;
    auto sample = importance_sample_indexed(lifted, map, sc);
    int fixed = 0;
    for (std::size_t j = 0; j < sample.indices.size(); ++j) {
      if (sample.raw_weights[j] == p.weight(sample.indices[j])) ++fixed;
    }
    CHECK(static_cast<int>(sample.indices.size()) <= sc.m + fixed);
    auto coreset = p.subset(sample.indices);
    Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(sample.weights.data(),
                                                          sample.weights.size());
    WeightedPointSet c(coreset.points(), u);

    Rng qrng(1002);
    std::vector<double> errs;
    for (int q = 0; q < 100; ++q) {
      GmmModel theta = query(qrng);
      const double full = phi_cost(p, theta, cfg);
      const double sub = phi_cost(c, theta, cfg);
      errs.push_back(std::abs(full / sub - 1.0));
    }
    std::sort(errs.begin(), errs.end());
    CAPTURE(errs[50], errs[89], errs[99]);
    CHECK(errs[50] <= 0.2);
  }
}
