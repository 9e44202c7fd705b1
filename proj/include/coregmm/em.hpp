#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"
#include "coregmm/rng.hpp"

namespace coregmm {

// Weighted EM for Gaussian mixtures. Point weights multiply responsibilities
// everywhere, so a point of weight w is indistinguishable from w unit copies
// (the seeding draws by cumulative weight for the same reason). Covariances
// are eigen-clamped every M-step, which keeps every iteration well defined
// at the cost of an (at most floor-sized) wobble in the likelihood ascent.

struct EmConfig {
  int k = 1;
  int restarts = 1;
  int max_iters = 100;
  // Relative change of the weighted NLL that counts as converged.
  double tol = 1e-8;
  double eigen_floor = kEigenFloor;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw InvalidRange("EmConfig: k must be >= 1");
    if (restarts < 1) throw InvalidRange("EmConfig: restarts must be >= 1");
    if (max_iters < 1) throw InvalidRange("EmConfig: max_iters must be >= 1");
    if (!(tol >= 0.0)) throw InvalidRange("EmConfig: tol must be >= 0");
    if (!(eigen_floor > 0.0)) {
      throw InvalidRange("EmConfig: eigen_floor must be > 0");
    }
  }
};

// Per-restart diagnostics: the weighted NLL trace (one entry per E-step),
// the final NLL of each restart that produced a model (NaN for failures),
// and how many starvation reseeds each restart spent.
struct EmTrace {
  std::vector<std::vector<double>> nll;
  std::vector<double> final_nll;
  std::vector<int> reseeds;
  std::vector<std::string> failures;
  int best_restart = -1;
};

namespace detail {

// Inverse-CDF draw over a non-negative mass vector; falls back to the point
// weights when the mass has vanished entirely (e.g. every atom already
// carries a center).
inline int draw_by_mass(const WeightedPointSet& p, const Eigen::VectorXd& mass,
                        Rng& rng) {
  const double total = mass.sum();
  const Eigen::VectorXd& use = total > 0.0 ? mass : p.weights();
  const double scale = total > 0.0 ? total : p.total_weight();
  const double x = rng.uniform01() * scale;
  double acc = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    acc += use[i];
    if (x < acc) return i;
  }
  return p.size() - 1;
}

// Weighted k-means++: the first center by weight, each later one by
// weight times squared distance to the nearest chosen center.
inline std::vector<Eigen::VectorXd> kmeanspp_centers(const WeightedPointSet& p,
                                                     int k, Rng& rng) {
  const int n = p.size();
  std::vector<Eigen::VectorXd> centers;
  centers.reserve(k);
  Eigen::VectorXd d2 = Eigen::VectorXd::Zero(n);
  for (int c = 0; c < k; ++c) {
    int idx;
    if (c == 0) {
      idx = draw_by_mass(p, p.weights(), rng);
    } else {
      idx = draw_by_mass(p, p.weights().cwiseProduct(d2), rng);
    }
    centers.push_back(p.point(idx));
    for (int j = 0; j < n; ++j) {
      const double dist =
          (p.points().row(j).transpose() - centers.back()).squaredNorm();
      d2[j] = (c == 0) ? dist : std::min(d2[j], dist);
    }
  }
  return centers;
}

// Weighted mean and covariance of the whole set, eigen-clamped; the initial
// covariance of every component.
inline PsdMatrix global_covariance(const WeightedPointSet& p,
                                   double eigen_floor) {
  const double total = p.total_weight();
  const Eigen::VectorXd mean = p.points().transpose() * p.weights() / total;
  Eigen::MatrixXd centered = p.points();
  centered.rowwise() -= mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() *
                        p.weights().asDiagonal() * centered / total;
  cov = 0.5 * (cov + cov.transpose());
  return PsdMatrix(cov, eigen_floor);
}

struct EStep {
  Eigen::MatrixXd resp;       // n x k responsibilities
  Eigen::VectorXd mass;       // k: sum_j w_j resp(j, i)
  double nll = 0.0;           // weighted NLL of the model being evaluated
};

inline EStep e_step(const WeightedPointSet& p, const GmmModel& model) {
  const int n = p.size();
  const int k = model.k();
  EStep out;
  out.resp.resize(n, k);
  out.mass = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd e(k);
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd pj = p.point(j);
    for (int i = 0; i < k; ++i) {
      e[i] = model.log_norm(i) - 0.5 * model.mahalanobis(i, pj);
    }
    const double mx = e.maxCoeff();
    const double lse = mx + std::log((e.array() - mx).exp().sum());
    out.nll -= p.weight(j) * lse;
    for (int i = 0; i < k; ++i) {
      const double r = std::exp(e[i] - lse);
      out.resp(j, i) = r;
      out.mass[i] += p.weight(j) * r;
    }
  }
  return out;
}

inline GmmModel m_step(const WeightedPointSet& p, const EStep& es,
                       double eigen_floor) {
  const int k = static_cast<int>(es.mass.size());
  const double total = es.mass.sum();
  std::vector<GmmComponent> comps;
  comps.reserve(k);
  for (int i = 0; i < k; ++i) {
    const Eigen::VectorXd c = p.weights().cwiseProduct(es.resp.col(i));
    const Eigen::VectorXd mean = p.points().transpose() * c / es.mass[i];
    Eigen::MatrixXd centered = p.points();
    centered.rowwise() -= mean.transpose();
    Eigen::MatrixXd cov =
        centered.transpose() * c.asDiagonal() * centered / es.mass[i];
    cov = 0.5 * (cov + cov.transpose());
    comps.emplace_back(es.mass[i] / total, mean, PsdMatrix(cov, eigen_floor));
  }
  return GmmModel(std::move(comps));
}

inline GmmModel em_single_restart(const WeightedPointSet& p,
                                  const EmConfig& cfg, std::uint64_t seed,
                                  std::vector<double>& nll_trace,
                                  int& reseeds) {
  Rng rng(seed);
  const PsdMatrix global = global_covariance(p, cfg.eigen_floor);
  std::vector<Eigen::VectorXd> centers = kmeanspp_centers(p, cfg.k, rng);
  std::vector<GmmComponent> comps;
  comps.reserve(cfg.k);
  for (int i = 0; i < cfg.k; ++i) {
    comps.emplace_back(1.0 / cfg.k, centers[i], global);
  }
  GmmModel model(std::move(comps));

  reseeds = 0;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iters; ++it) {
    EStep es = e_step(p, model);
    nll_trace.push_back(es.nll);

    int starved = -1;
    for (int i = 0; i < cfg.k; ++i) {
      if (es.mass[i] < 1e-12) {
        starved = i;
        break;
      }
    }
    if (starved >= 0) {
      if (reseeds >= 1) {
        throw DegenerateComponent(
            "em_fit_weighted: component " + std::to_string(starved) +
            " lost all responsibility mass after a reseed");
      }
      ++reseeds;
      // Redraw the starved component's mean by residual distance to the
      // current means, keep the pooled covariance, and rebalance the
      // mixture weights.
      Eigen::VectorXd d2(p.size());
      for (int j = 0; j < p.size(); ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < cfg.k; ++i) {
          const double dist = (p.points().row(j).transpose() -
                               model.component(i).mean).squaredNorm();
          best = std::min(best, dist);
        }
        d2[j] = best;
      }
      const int idx = draw_by_mass(p, p.weights().cwiseProduct(d2), rng);
      std::vector<GmmComponent> next;
      next.reserve(cfg.k);
      for (int i = 0; i < cfg.k; ++i) {
        next.emplace_back(1.0 / cfg.k,
                          i == starved ? p.point(idx)
                                       : model.component(i).mean,
                          i == starved ? global : model.component(i).covariance);
      }
      model = GmmModel(std::move(next));
      prev = std::numeric_limits<double>::infinity();
      continue;
    }

    model = m_step(p, es, cfg.eigen_floor);
    if (std::abs(prev - es.nll) <= cfg.tol * std::max(1.0, std::abs(es.nll))) {
      break;
    }
    prev = es.nll;
  }
  return model;
}

}  // namespace detail

// Fits a k-component mixture to a weighted set, keeping the best of
// cfg.restarts independently seeded runs by final weighted NLL. A restart
// whose component starves twice is recorded and skipped; if every restart
// starves, the last failure is rethrown.
inline GmmModel em_fit_weighted(const WeightedPointSet& p, const EmConfig& cfg,
                                EmTrace* trace = nullptr) {
  cfg.validate();
  if (p.size() < cfg.k) {
    throw TooFewPoints("em_fit_weighted: need at least k points");
  }
  EmTrace local;
  EmTrace& tr = trace ? *trace : local;
  tr = EmTrace{};

  GmmModel best({GmmComponent(1.0, Eigen::VectorXd::Zero(p.dim()),
                              PsdMatrix(Eigen::MatrixXd::Identity(p.dim(),
                                                                  p.dim())))});
  bool have_best = false;
  double best_nll = std::numeric_limits<double>::infinity();
  std::string last_failure;

  for (int r = 0; r < cfg.restarts; ++r) {
    std::vector<double> nll_trace;
    int reseeds = 0;
    try {
      GmmModel model = detail::em_single_restart(
          p, cfg, derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)}),
          nll_trace, reseeds);
      const double final_nll = neg_log_likelihood(p, model);
      tr.nll.push_back(std::move(nll_trace));
      tr.final_nll.push_back(final_nll);
      tr.reseeds.push_back(reseeds);
      if (!have_best || final_nll < best_nll) {
        best = std::move(model);
        best_nll = final_nll;
        tr.best_restart = r;
        have_best = true;
      }
    } catch (const DegenerateComponent& e) {
      tr.nll.push_back(std::move(nll_trace));
      tr.final_nll.push_back(std::numeric_limits<double>::quiet_NaN());
      tr.reseeds.push_back(reseeds);
      tr.failures.push_back(e.what());
      last_failure = e.what();
    }
  }
  if (!have_best) throw DegenerateComponent(last_failure);
  return best;
}

// Positional convenience form.
inline GmmModel em_fit_weighted(const WeightedPointSet& p, int k, int restarts,
                                int max_iters, double tol,
                                std::uint64_t seed = 0) {
  EmConfig cfg;
  cfg.k = k;
  cfg.restarts = restarts;
  cfg.max_iters = max_iters;
  cfg.tol = tol;
  cfg.seed = seed;
  return em_fit_weighted(p, cfg);
}

}  // namespace coregmm
