#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"
#include "coregmm/rng.hpp"
#include "coregmm/smm.hpp"

namespace coregmm {

// Integer-lattice assumptions of the grid construction. With quantize set,
// inputs are rounded to {-m..m}^d first; either way points must land inside
// [-m, m]^d or construction refuses.
struct GridConfig {
  long long m = 2;          // grid bound M
  bool quantize = false;
  int passthrough = 64;     // inputs at most this size are returned whole
  long long budget = 1'000'000;  // node-expansion cap for the recursion

  void validate() const {
    if (m < 2) throw InvalidRange("GridConfig: m must be >= 2");
    if (passthrough < 1) throw InvalidRange("GridConfig: passthrough must be >= 1");
    if (budget < 1) throw InvalidRange("GridConfig: budget must be >= 1");
  }
};

namespace detail {

// On-subspace tolerance for band classification (lattice-scale absolute).
inline constexpr double kOnSubspaceTol = 1e-9;

struct ProjState {
  const Eigen::MatrixXd& pts;  // row per point, possibly quantized copy
  double eps;
  GridConfig cfg;
  long long budget_left;
  int dim;

  void charge() {
    if (--budget_left < 0) {
      throw RecursionBudgetExceeded("projective coreset: node budget exhausted");
    }
  }

  // Exponential band ladder around a subspace: band 0 is "on it", band j
  // covers distances in [2^{j-1}, 2^j) * c / m^{d+1}. Off-lattice points
  // below the first rung are merged into band 1; beyond the top rung they
  // are clamped into the last band.
  double band_unit() const {
    double c = 1.0 / std::pow(static_cast<double>(dim), 1.5 * (dim + 1));
    return c / std::pow(static_cast<double>(cfg.m), dim + 1);
  }

  int band_count() const {
    double c = 1.0 / std::pow(static_cast<double>(dim), 1.5 * (dim + 1));
    double j = 8.0 * dim * std::log2(static_cast<double>(cfg.m)) + std::log2(1.0 / c);
    return std::max(1, static_cast<int>(std::ceil(j)));
  }

  int band_of(double dist) const {
    if (dist <= kOnSubspaceTol) return 0;
    int j = static_cast<int>(std::floor(std::log2(dist / band_unit()))) + 1;
    return std::clamp(j, 1, band_count());
  }
};

// Orthogonal axes spanning the affine hull of the anchor points V; lengths
// are kept because grid cells are measured in units of the raw axis length.
struct AffineFrame {
  Eigen::VectorXd origin;
  Eigen::MatrixXd unit_axes;     // D x t, orthonormal
  std::vector<double> lengths;   // per-axis ||u_i||

  int t() const { return static_cast<int>(unit_axes.cols()); }

  double dist(const Eigen::VectorXd& p) const {
    Eigen::VectorXd r = p - origin;
    if (t() > 0) r -= unit_axes * (unit_axes.transpose() * r);
    return r.norm();
  }
};

inline AffineFrame make_frame(const Eigen::MatrixXd& pts, const std::vector<int>& v) {
  AffineFrame f;
  f.origin = pts.row(v[0]).transpose();
  const int dd = static_cast<int>(pts.cols());
  Eigen::MatrixXd axes(dd, 0);
  for (std::size_t i = 1; i < v.size(); ++i) {
    Eigen::VectorXd u = pts.row(v[i]).transpose() - f.origin;
    if (axes.cols() > 0) u -= axes * (axes.transpose() * u);
    double len = u.norm();
    if (len <= kOnSubspaceTol) continue;  // anchor already on the hull
    axes.conservativeResize(Eigen::NoChange, axes.cols() + 1);
    axes.col(axes.cols() - 1) = u / len;
    f.lengths.push_back(len);
  }
  f.unit_axes = std::move(axes);
  return f;
}

inline void merge_into(std::set<int>& acc, const std::vector<int>& more) {
  acc.insert(more.begin(), more.end());
}

inline int lowest_index(const std::vector<int>& idx) {
  return *std::min_element(idx.begin(), idx.end());
}

// Strict-corner convex hull (monotone chain) in the plane; returns original
// point indices. Exact for lattice-scale doubles.
inline std::vector<int> hull_vertices_2d(const Eigen::MatrixXd& pts,
                                         std::vector<int> idx) {
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (pts(a, 0) != pts(b, 0)) return pts(a, 0) < pts(b, 0);
    if (pts(a, 1) != pts(b, 1)) return pts(a, 1) < pts(b, 1);
    return a < b;
  });
  // drop exact duplicates, keeping the lowest original index per location
  std::vector<int> uniq;
  for (int i : idx) {
    if (!uniq.empty() && pts(uniq.back(), 0) == pts(i, 0) &&
        pts(uniq.back(), 1) == pts(i, 1)) {
      if (i < uniq.back()) uniq.back() = i;
      continue;
    }
    uniq.push_back(i);
  }
  if (uniq.size() <= 2) return uniq;
  auto cross = [&](int o, int a, int b) {
    return (pts(a, 0) - pts(o, 0)) * (pts(b, 1) - pts(o, 1)) -
           (pts(a, 1) - pts(o, 1)) * (pts(b, 0) - pts(o, 0));
  };
  std::vector<int> chain;
  auto build = [&](auto begin, auto end) {
    std::size_t base = chain.size();
    for (auto it = begin; it != end; ++it) {
      while (chain.size() >= base + 2 &&
             cross(chain[chain.size() - 2], chain[chain.size() - 1], *it) <= 0.0) {
        chain.pop_back();
      }
      chain.push_back(*it);
    }
    chain.pop_back();  // endpoint repeats as the next chain's start
  };
  build(uniq.begin(), uniq.end());
  build(uniq.rbegin(), uniq.rend());
  return chain;
}

// Deterministic probe directions: coordinate axes plus a fixed
// pseudo-random complement (Fibonacci sphere in 3-d).
inline std::vector<Eigen::VectorXd> probe_directions(int dd) {
  std::vector<Eigen::VectorXd> dirs;
  for (int i = 0; i < dd; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dd);
    e[i] = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  const int extra = 256;
  if (dd == 1) return dirs;
  if (dd == 3) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < extra; ++i) {
      double z = 1.0 - 2.0 * (i + 0.5) / extra;
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      double az = golden * i;
      Eigen::VectorXd v(3);
      v << r * std::cos(az), r * std::sin(az), z;
      dirs.push_back(v);
    }
  } else {
    Rng rng(derive_seed(0x70b3d1ce5ull, {static_cast<std::uint64_t>(dd)}));
    for (int i = 0; i < extra; ++i) {
      Eigen::VectorXd v(dd);
      for (int j = 0; j < dd; ++j) v[j] = rng.normal();
      double n = v.norm();
      if (n > 0) dirs.push_back(v / n);
    }
  }
  return dirs;
}

// Extreme point of the part along every probe direction (lowest index on
// ties). Contains every global directional extreme that falls in the part.
inline std::vector<int> directional_extremes(const Eigen::MatrixXd& pts,
                                             const std::vector<int>& idx) {
  const auto dirs = probe_directions(static_cast<int>(pts.cols()));
  std::set<int> picks;
  for (const auto& v : dirs) {
    int best = idx[0];
    double best_val = pts.row(idx[0]).dot(v);
    for (int i : idx) {
      double val = pts.row(i).dot(v);
      if (val > best_val || (val == best_val && i < best)) {
        best = i;
        best_val = val;
      }
    }
    picks.insert(best);
  }
  return {picks.begin(), picks.end()};
}

// Witness set of a part for single-subspace queries: whole part when small,
// exact hull corners in the plane, directional extremes otherwise.
inline std::vector<int> leaf_witness(ProjState& st, const std::vector<int>& idx) {
  if (idx.empty()) return {};
  if (static_cast<int>(idx.size()) <= st.cfg.passthrough) return idx;
  if (st.dim == 1) {
    int lo = idx[0], hi = idx[0];
    for (int i : idx) {
      if (st.pts(i, 0) < st.pts(lo, 0) || (st.pts(i, 0) == st.pts(lo, 0) && i < lo)) lo = i;
      if (st.pts(i, 0) > st.pts(hi, 0) || (st.pts(i, 0) == st.pts(hi, 0) && i < hi)) hi = i;
    }
    return lo == hi ? std::vector<int>{lo} : std::vector<int>{std::min(lo, hi), std::max(lo, hi)};
  }
  if (st.dim == 2) return hull_vertices_2d(st.pts, idx);
  return directional_extremes(st.pts, idx);
}

// Single-subspace coreset: exponential bands and grid cells around a greedy
// spine of farthest anchors, with a witness set per part. In the plane the
// union provably contains every hull corner, and the hull corners alone are
// an exact witness set, so the result is pruned back to them.
inline std::vector<int> subspace_base(ProjState& st, const std::vector<int>& idx) {
  if (idx.empty()) return {};
  st.charge();
  if (static_cast<int>(idx.size()) <= st.cfg.passthrough) return idx;
  if (st.dim == 2) return hull_vertices_2d(st.pts, idx);

  std::set<int> acc;
  std::vector<int> spine = {lowest_index(idx)};
  acc.insert(spine[0]);
  for (int level = 0; level < st.dim; ++level) {
    AffineFrame frame = make_frame(st.pts, spine);

    std::map<int, std::vector<int>> bands;
    for (int i : idx) bands[st.band_of(frame.dist(st.pts.row(i).transpose()))].push_back(i);
    for (const auto& [j, members] : bands) {
      (void)j;
      merge_into(acc, leaf_witness(st, members));
    }

    if (frame.t() >= 1) {
      int ncell = static_cast<int>(std::ceil(1.0 / st.eps));
      std::map<long long, std::vector<int>> cells;
      for (int i : idx) {
        Eigen::VectorXd r = st.pts.row(i).transpose() - frame.origin;
        long long key = 0;
        for (int ax = 0; ax < frame.t(); ++ax) {
          double a = frame.unit_axes.col(ax).dot(r) / frame.lengths[ax];
          int cell = static_cast<int>(std::floor((a + 1.0) / (2.0 * st.eps)));
          key = key * (ncell + 1) + std::clamp(cell, 0, ncell - 1);
        }
        cells[key].push_back(i);
      }
      for (const auto& [key, members] : cells) {
        (void)key;
        merge_into(acc, leaf_witness(st, members));
      }
    }

    // grow the spine toward the farthest remaining point (first index wins ties)
    int far = -1;
    double far_dist = kOnSubspaceTol;
    for (int i : idx) {
      double d = frame.dist(st.pts.row(i).transpose());
      if (d > far_dist) {
        far = i;
        far_dist = d;
      }
    }
    if (far < 0 || static_cast<int>(spine.size()) >= st.dim) break;
    spine.push_back(far);
    acc.insert(far);
  }
  return {acc.begin(), acc.end()};
}

std::vector<int> pcc(ProjState& st, const std::vector<int>& idx, int k);

// One recursion node: grid cells across the anchor frame handle variation
// along the anchors' hull, exponential bands handle distance from it, and
// every band point in the band's sub-coreset grows the anchor set by one.
inline std::vector<int> recursion(ProjState& st, const std::vector<int>& idx, int k,
                                  const std::vector<int>& v) {
  if (idx.empty()) return {};
  st.charge();
  if (k <= 0) return {lowest_index(idx)};

  std::set<int> acc;
  const int t = static_cast<int>(v.size()) - 1;
  AffineFrame frame = make_frame(st.pts, v);

  if (t >= 1 && frame.t() >= 1) {
    int ncell = static_cast<int>(std::ceil(1.0 / st.eps));
    std::map<long long, std::vector<int>> cells;
    for (int i : idx) {
      Eigen::VectorXd r = st.pts.row(i).transpose() - frame.origin;
      long long key = 0;
      for (int ax = 0; ax < frame.t(); ++ax) {
        double a = frame.unit_axes.col(ax).dot(r) / frame.lengths[ax];
        int cell = static_cast<int>(std::floor((a + 1.0) / (2.0 * st.eps)));
        key = key * (ncell + 1) + std::clamp(cell, 0, ncell - 1);
      }
      cells[key].push_back(i);
    }
    for (const auto& [key, members] : cells) {
      (void)key;
      merge_into(acc, pcc(st, members, k - 1));
    }
  }

  if (t <= st.dim - 1) {
    std::map<int, std::vector<int>> bands;
    for (int i : idx) bands[st.band_of(frame.dist(st.pts.row(i).transpose()))].push_back(i);

    // points on the hull itself get a sub-coreset but do not grow the
    // anchor set (they add no new direction)
    if (auto it = bands.find(0); it != bands.end()) {
      merge_into(acc, pcc(st, it->second, k - 1));
    }

    std::vector<int> scope;
    if (auto it = bands.find(0); it != bands.end()) scope = it->second;
    for (int j = 1; j <= st.band_count(); ++j) {
      auto it = bands.find(j);
      if (it == bands.end()) continue;
      const auto& band = it->second;
      scope.insert(scope.end(), band.begin(), band.end());
      std::vector<int> kj = pcc(st, band, k - 1);
      merge_into(acc, kj);
      if (static_cast<int>(v.size()) <= st.dim) {
        for (int grown : kj) {
          std::vector<int> v2 = v;
          v2.push_back(grown);
          merge_into(acc, recursion(st, scope, k - 1, v2));
        }
      }
    }
  }
  return {acc.begin(), acc.end()};
}

inline std::vector<int> pcc(ProjState& st, const std::vector<int>& idx, int k) {
  if (idx.empty()) return {};
  st.charge();
  if (k <= 0) return {lowest_index(idx)};
  if (k == 1) return subspace_base(st, idx);

  std::vector<int> snapshot = pcc(st, idx, k - 1);
  std::set<int> acc(snapshot.begin(), snapshot.end());
  for (int v0 : snapshot) {
    merge_into(acc, recursion(st, idx, k, {v0}));
  }
  return {acc.begin(), acc.end()};
}

// Validate bounds and (optionally) round to the lattice; returns the
// geometry the construction actually runs on.
inline Eigen::MatrixXd grid_prepare(const WeightedPointSet& p, const GridConfig& cfg) {
  cfg.validate();
  Eigen::MatrixXd pts = p.points();
  const double bound = static_cast<double>(cfg.m);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      if (cfg.quantize) pts(i, j) = std::nearbyint(pts(i, j));
      if (std::abs(pts(i, j)) > bound + 1e-9) {
        throw GridBoundExceeded("grid construction: point outside [-m, m]^d");
      }
    }
  }
  return pts;
}

}  // namespace detail

// Subset of P (as indices) witnessing max-distance queries by a single
// affine subspace of any dimension, up to factor 1+eps.
inline std::vector<int> subspace_coreset_base(const WeightedPointSet& p, double eps,
                                              const GridConfig& cfg = GridConfig{}) {
  if (p.empty()) throw EmptySet("subspace_coreset_base: empty set");
  if (!(eps > 0.0) || eps >= 1.0) {
    throw InvalidRange("subspace_coreset_base: eps must lie in (0,1)");
  }
  Eigen::MatrixXd pts = detail::grid_prepare(p, cfg);
  detail::ProjState st{pts, eps, cfg, cfg.budget, p.dim()};
  std::vector<int> all(p.size());
  for (int i = 0; i < p.size(); ++i) all[i] = i;
  std::vector<int> out = detail::subspace_base(st, all);
  std::sort(out.begin(), out.end());
  return out;
}

// Subset of P (as indices) witnessing max-distance queries by any k affine
// subspaces, up to factor 1+eps; deterministic in the input order.
inline std::vector<int> linf_projective_coreset(const WeightedPointSet& p, int k,
                                                double eps,
                                                const GridConfig& cfg = GridConfig{}) {
  if (p.empty()) throw EmptySet("linf_projective_coreset: empty set");
  if (k < 1) throw InvalidRange("linf_projective_coreset: k must be >= 1");
  if (!(eps > 0.0) || eps >= 1.0) {
    throw InvalidRange("linf_projective_coreset: eps must lie in (0,1)");
  }
  Eigen::MatrixXd pts = detail::grid_prepare(p, cfg);
  detail::ProjState st{pts, eps, cfg, cfg.budget, p.dim()};
  std::vector<int> all(p.size());
  for (int i = 0; i < p.size(); ++i) all[i] = i;
  std::vector<int> out = detail::pcc(st, all, k);
  std::sort(out.begin(), out.end());
  return out;
}

// Farthest-point traversal for k+1 rounds: the classical 2-approximation
// for k-center doubles as a 2-factor max-distance coreset for k point
// queries. Starts at index 0; lowest index wins ties.
inline std::vector<int> gonzalez_kcenter_coreset(const WeightedPointSet& p, int k) {
  if (p.empty()) throw EmptySet("gonzalez_kcenter_coreset: empty set");
  if (k < 1) throw InvalidRange("gonzalez_kcenter_coreset: k must be >= 1");
  const int n = p.size();
  const int want = std::min(k + 1, n);
  std::vector<int> chosen = {0};
  Eigen::VectorXd min_dist(n);
  for (int i = 0; i < n; ++i) min_dist[i] = (p.points().row(i) - p.points().row(0)).norm();
  while (static_cast<int>(chosen.size()) < want) {
    int far = 0;
    for (int i = 1; i < n; ++i) {
      if (min_dist[i] > min_dist[far]) far = i;
    }
    chosen.push_back(far);
    for (int i = 0; i < n; ++i) {
      min_dist[i] = std::min(min_dist[i], (p.points().row(i) - p.points().row(far)).norm());
    }
  }
  return chosen;
}

// A coreset scheme the pipeline can be configured with; `full` is the
// identity scheme (keep everything).
class LinfScheme {
 public:
  enum class Kind { projective, kcenter, full };

  struct Stats {
    int input_size = 0;
    int output_size = 0;
    double build_ms = 0.0;
  };

  LinfScheme(Kind kind, int k, double eps = 1.0 / 3.0, GridConfig grid = GridConfig{})
      : kind_(kind), k_(k), eps_(eps), grid_(grid) {}

  Kind kind() const { return kind_; }
  int k() const { return k_; }
  double eps() const { return eps_; }
  const GridConfig& grid() const { return grid_; }
  const Stats& last_run() const { return stats_; }

  std::vector<int> construct(const WeightedPointSet& p) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> out;
    switch (kind_) {
      case Kind::projective:
        out = linf_projective_coreset(p, k_, eps_, grid_);
        break;
      case Kind::kcenter:
        out = gonzalez_kcenter_coreset(p, k_);
        break;
      case Kind::full:
        out.resize(p.size());
        for (int i = 0; i < p.size(); ++i) out[i] = i;
        break;
    }
    auto t1 = std::chrono::steady_clock::now();
    stats_.input_size = p.size();
    stats_.output_size = static_cast<int>(out.size());
    stats_.build_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return out;
  }

  // The kinds above are deterministic, so the failure budget is validated
  // and otherwise unused; randomized schemes plug in through this signature.
  std::vector<int> construct(const WeightedPointSet& p, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidRange("LinfScheme: delta must be in (0,1)");
    }
    return construct(p);
  }

 private:
  Kind kind_;
  int k_;
  double eps_;
  GridConfig grid_;
  Stats stats_;
};

using QuerySampler = std::function<std::vector<AffineSubspace>(int)>;

// Rotation-invariant random frames with offsets uniform over the data
// bounding box. Subspace dimension is uniform over {min_dim..max_dim},
// where max_dim = -1 means ambient dimension minus one.
inline QuerySampler make_subspace_query_sampler(const WeightedPointSet& data, int k,
                                                std::uint64_t seed, int min_dim = 0,
                                                int max_dim = -1) {
  if (data.empty()) throw EmptySet("query sampler: empty data");
  const int dd = data.dim();
  const int top = max_dim < 0 ? dd - 1 : std::min(max_dim, dd - 1);
  if (min_dim < 0 || min_dim > top) {
    throw InvalidRange("query sampler: empty subspace dimension range");
  }
  Eigen::VectorXd lo = data.points().colwise().minCoeff().transpose();
  Eigen::VectorXd hi = data.points().colwise().maxCoeff().transpose();
  return [=](int trial) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(trial)}));
    std::vector<AffineSubspace> query;
    for (int c = 0; c < k; ++c) {
      int j = min_dim + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(top - min_dim + 1)));
      Eigen::VectorXd offset(dd);
      for (int i = 0; i < dd; ++i) offset[i] = rng.uniform(lo[i], hi[i]);
      if (j == 0) {
        query.push_back(AffineSubspace::point(offset));
        continue;
      }
      Eigen::MatrixXd g(dd, j);
      for (int a = 0; a < dd; ++a) {
        for (int b = 0; b < j; ++b) g(a, b) = rng.normal();
      }
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
      Eigen::MatrixXd q = qr.householderQ();
      query.emplace_back(q.leftCols(j), offset);
    }
    return query;
  };
}

struct OracleReport {
  double max_ratio = 1.0;
  int degenerate = 0;
  int trials = 0;
};

// Statistical validation: max over sampled queries of the ratio between the
// full set's and the subset's worst distances. Both-zero counts as ratio 1;
// a zero denominator against a nonzero numerator is recorded as degenerate
// and skipped.
inline OracleReport brute_force_linf_check(const WeightedPointSet& p,
                                           const WeightedPointSet& c,
                                           const QuerySampler& sampler, int trials) {
  if (trials < 1) throw InvalidRange("brute_force_linf_check: trials must be >= 1");
  if (p.empty() || c.empty()) throw EmptySet("brute_force_linf_check: empty set");
  OracleReport report;
  report.trials = trials;
  const double tol = 1e-12 * (1.0 + p.points().cwiseAbs().maxCoeff());
  for (int t = 0; t < trials; ++t) {
    std::vector<AffineSubspace> query = sampler(t);
    double num = dist_inf(p, query);
    double den = dist_inf(c, query);
    if (num <= tol && den <= tol) continue;  // 0/0 counts as ratio 1
    if (den <= tol) {
      ++report.degenerate;
      continue;
    }
    report.max_ratio = std::max(report.max_ratio, num / den);
  }
  return report;
}

}  // namespace coregmm
