#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "coregmm/errors.hpp"
#include "coregmm/points.hpp"
#include "coregmm/rng.hpp"

namespace coregmm {

// Merge-reduce streaming. Points are buffered into buckets of size s(h) and
// folded upward through a binary merge tree: each full buffer triggers a
// carry propagation (exactly a binary-counter increment) where occupied
// levels are merged with an inner reduction run at relaxed per-level
// parameters (eps/h, delta/4^h). When a tree of height h has absorbed its
// 2^(h-1) * s(h) point budget, its root is frozen and a taller tree starts,
// so an unbounded stream is covered by a forest whose frozen roots plus live
// buckets are reduced once more, at the full (eps, delta), on query.
//
// The bucket schedule s(.) is the "halving function" of the inner scheme:
// large enough that reducing two buckets yields at most one bucket. The
// calculus for certifying such schedules needs the lower branch of the
// Lambert W function, which is provided here as well.

// ---------------------------------------------------------------------------
// Lambert W, lower branch.

// W_{-1}(x) for x in [-1/e, 0): the unique W <= -1 with W * e^W = x.
// Safeguarded Halley iteration inside a sign-change bracket; the residual
// |W e^W - x| is driven to relative machine precision (absolute residual is
// far below 1e-12 everywhere on the domain).
inline double lambert_w_minus1(double x) {
  const double branch = -std::exp(-1.0);
  if (!(x < 0.0) || x < branch - 1e-15) {
    throw OutOfDomain("lambert_w_minus1: x must lie in [-1/e, 0)");
  }
  // At (or within rounding of) the branch point the two real branches meet.
  if (x <= branch || 1.0 + std::numbers::e * x <= 0.0) return -1.0;

  double w;
  if (x < -0.25) {
    // Series about the branch point, lower-branch sign.
    const double p = std::sqrt(2.0 * (1.0 + std::numbers::e * x));
    w = -1.0 - p - p * p / 3.0 - (11.0 / 72.0) * p * p * p;
  } else {
    // Asymptotic start; accurate as x -> 0^-.
    const double l1 = std::log(-x);
    w = l1 - std::log(-l1);
  }

  // f(w) = w e^w - x is positive at -inf, non-positive at -1, and strictly
  // decreasing in between, so a sign-change bracket [lo, -1] always exists.
  double lo = std::min(2.0 * w, -2.0);
  for (int guard = 0; guard < 64 && lo * std::exp(lo) - x <= 0.0; ++guard) {
    lo *= 2.0;
  }
  double hi = -1.0;
  w = std::clamp(w, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - x;
    if (std::abs(f) <= 1e-15 * std::max(std::abs(x), 1e-300)) break;
    if (f > 0.0) {
      lo = w;
    } else {
      hi = w;
    }
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(lo))) break;
    const double wp1 = w + 1.0;
    const double step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
    double next = w - step;
    if (!std::isfinite(next) || next <= lo || next >= hi) {
      next = 0.5 * (lo + hi);
    }
    w = next;
  }
  return std::min(w, -1.0);
}

// The two bucket-size thresholds certified by the halving calculus for a
// scheme whose output size scales like (ln n / (c * eps))^c.
struct HalvingThreshold {
  // exact solves n = (ln n / (c eps))^c with equality: e^{-c W_{-1}(-eps)}.
  double exact = 0.0;
  // closed sufficient bound (4/eps ln(4/eps))^c; always >= exact.
  double sufficient = 0.0;
};

inline HalvingThreshold halving_threshold(double eps, int c) {
  if (c < 1) throw OutOfDomain("halving_threshold: c must be >= 1");
  const double cap = std::exp(-static_cast<double>(c));
  if (!(eps > 0.0) || eps > cap * (1.0 + 1e-12)) {
    throw OutOfDomain("halving_threshold: eps must lie in (0, e^-c]");
  }
  HalvingThreshold t;
  const double w = lambert_w_minus1(-std::min(eps, cap));
  t.exact = std::exp(-static_cast<double>(c) * w);
  t.sufficient =
      std::pow(4.0 / eps * std::log(4.0 / eps), static_cast<double>(c));
  return t;
}

// ---------------------------------------------------------------------------
// Bucket-size schedule.

// s(h): how many points a tree of height h buffers per leaf bucket. Either a
// pragmatic constant (or an explicit per-height table), or the closed form
//
//   s(h) = h/eps^2 * ln(h/eps) * ln^2(1/delta) * ln^{2g}(M)
//
// for inputs drawn from an integer grid of radius M, with g the exponent the
// inner scheme's size bound carries in ln(M). The closed form comes with a
// certificate scale u(h) = sqrt(4 h^5 / eps^2 * g ln(M) * ln(4/delta)): any
// schedule with s(h) >= 10 u(h)^3 >= (4 u(h) ln(4 u(h)))^2 provably halves.
// That constant-level bound only kicks in once ln(M) dominates; at desk
// scales the closed form sits below its own certificate, which strict mode
// reports rather than hides.
class HalvingFunction {
 public:
  enum class Kind { constant, table, theoretical };

  static HalvingFunction constant(long long bucket) {
    if (bucket < 1) {
      throw InvalidRange("HalvingFunction: bucket size must be >= 1");
    }
    HalvingFunction f;
    f.kind_ = Kind::constant;
    f.levels_ = {bucket};
    f.lipschitz_ = 0.0;
    return f;
  }

  // Explicit schedule; entry i is s(i + 1) and the last entry extends to all
  // larger heights. Must be non-decreasing.
  static HalvingFunction table(std::vector<long long> levels,
                               double lipschitz = 1.0) {
    if (levels.empty()) throw InvalidRange("HalvingFunction: empty table");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] < 1) {
        throw InvalidRange("HalvingFunction: bucket size must be >= 1");
      }
      if (i > 0 && levels[i] < levels[i - 1]) {
        throw InvalidRange("HalvingFunction: table must be non-decreasing");
      }
    }
    if (!(lipschitz >= 0.0)) {
      throw InvalidRange("HalvingFunction: lipschitz degree must be >= 0");
    }
    HalvingFunction f;
    f.kind_ = Kind::table;
    f.levels_ = std::move(levels);
    f.lipschitz_ = lipschitz;
    return f;
  }

  static HalvingFunction theoretical(double eps, double delta, double grid_m,
                                     double g) {
    if (!(eps > 0.0 && eps < 1.0)) {
      throw InvalidRange("HalvingFunction: eps must lie in (0, 1)");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidRange("HalvingFunction: delta must lie in (0, 1)");
    }
    if (!(grid_m >= 2.0)) {
      throw InvalidRange("HalvingFunction: grid radius M must be >= 2");
    }
    if (!(g >= 1.0)) {
      throw InvalidRange("HalvingFunction: grid exponent g must be >= 1");
    }
    HalvingFunction f;
    f.kind_ = Kind::theoretical;
    f.eps_ = eps;
    f.delta_ = delta;
    f.grid_m_ = grid_m;
    f.g_ = g;
    // Composition of a quadratic merge loss with the 5/2-log-Lipschitz
    // certificate scale.
    f.lipschitz_ = 10.0;
    return f;
  }

  long long operator()(int h) const {
    if (h < 1) throw InvalidRange("HalvingFunction: height must be >= 1");
    if (kind_ != Kind::theoretical) {
      const std::size_t idx =
          std::min<std::size_t>(static_cast<std::size_t>(h), levels_.size());
      return levels_[idx - 1];
    }
    const double ln_m = std::log(grid_m_);
    const double v = h / (eps_ * eps_) * std::log(h / eps_) *
                     std::pow(std::log(1.0 / delta_), 2.0) *
                     std::pow(ln_m, 2.0 * g_);
    if (!(v < 4.0e18)) return 1LL << 62;
    return std::max<long long>(1, static_cast<long long>(std::ceil(v)));
  }

  Kind kind() const { return kind_; }
  double lipschitz_degree() const { return lipschitz_; }

  // Certificate scale of the closed form (theoretical kind only).
  double u(int h) const {
    require_theoretical_();
    if (h < 1) throw InvalidRange("HalvingFunction: height must be >= 1");
    return std::sqrt(4.0 * std::pow(static_cast<double>(h), 5.0) /
                     (eps_ * eps_) * g_ * std::log(grid_m_) *
                     std::log(4.0 / delta_));
  }

  double certified_lower_bound(int h) const {
    return 10.0 * std::pow(u(h), 3.0);
  }

  // Whether the schedule meets its own sufficiency bound at height h.
  bool certified(int h) const {
    return static_cast<double>((*this)(h)) >= certified_lower_bound(h);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    switch (kind_) {
      case Kind::constant:
        j["kind"] = "constant";
        j["bucket"] = levels_[0];
        break;
      case Kind::table:
        j["kind"] = "table";
        j["levels"] = levels_;
        j["lipschitz"] = lipschitz_;
        break;
      case Kind::theoretical:
        j["kind"] = "theoretical";
        j["eps"] = eps_;
        j["delta"] = delta_;
        j["grid_m"] = grid_m_;
        j["g"] = g_;
        break;
    }
    return j;
  }

  static HalvingFunction from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
      return constant(j.at("bucket").get<long long>());
    }
    if (kind == "table") {
      return table(j.at("levels").get<std::vector<long long>>(),
                   j.at("lipschitz").get<double>());
    }
    if (kind == "theoretical") {
      return theoretical(j.at("eps").get<double>(),
                         j.at("delta").get<double>(),
                         j.at("grid_m").get<double>(), j.at("g").get<double>());
    }
    throw InvalidRange("HalvingFunction: unknown kind '" + kind + "'");
  }

 private:
  HalvingFunction() = default;

  void require_theoretical_() const {
    if (kind_ != Kind::theoretical) {
      throw InvalidRange(
          "HalvingFunction: certificate requires the closed-form schedule");
    }
  }

  Kind kind_ = Kind::constant;
  std::vector<long long> levels_ = {1};
  double lipschitz_ = 0.0;
  double eps_ = 0.0;
  double delta_ = 0.0;
  double grid_m_ = 0.0;
  double g_ = 0.0;
};

// ---------------------------------------------------------------------------
// Stream state.

// Inner reduction invoked at every merge node. Must return a non-empty
// weighted set over the same space whose total weight equals the input's
// (that is what makes merge trees composable); the seed makes randomized
// reducers reproducible per node.
using InnerScheme = std::function<WeightedPointSet(
    const WeightedPointSet& block, double eps, double delta,
    std::uint64_t seed)>;

struct StreamConfig {
  double epsilon = 1.0 / 3.0;
  double delta = 0.1;
  std::uint64_t seed = 0;
  HalvingFunction halving = HalvingFunction::constant(256);
  InnerScheme inner;

  // > 0 declares the total stream length up front: a single tree tall enough
  // for that many points is used and never rolls over. Exceeding the
  // declared size keeps working (the counter simply grows past the planned
  // height) but stretches the per-merge error budget.
  long long known_size = 0;

  // Refuse schedules that fail their own sufficiency certificate; requires
  // the closed-form halving function.
  bool strict = false;

  // Reject inner reducers that change the total weight by more than rounding
  // allows. Disable only for deliberately lossy reducers.
  bool enforce_weight_conservation = true;

  // Make insert() hand back the running coreset after every carry (the
  // query reduce is re-run, so leaving this off keeps insertion cheap).
  bool emit_on_cascade = false;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) {
      throw InvalidRange("StreamConfig: epsilon must lie in (0, 1/2)");
    }
    if (!(delta > 0.0 && delta < 0.5)) {
      throw InvalidRange("StreamConfig: delta must lie in (0, 1/2)");
    }
    if (!inner) throw InvalidRange("StreamConfig: inner scheme is required");
    if (known_size < 0) {
      throw InvalidRange("StreamConfig: known_size must be >= 0");
    }
    if (strict && halving.kind() != HalvingFunction::Kind::theoretical) {
      throw InvalidRange(
          "StreamConfig: strict mode requires the closed-form halving "
          "function");
    }
  }
};

// Live forest over one stream. Single writer: insert() mutates and must not
// race; query() is const and may run concurrently with other reads. A failed
// inner reduction aborts the carry mid-way and poisons the state, so treat
// InnerSchemeFailure as fatal for this instance.
class StreamState {
 public:
  StreamState(int dim, StreamConfig cfg) : cfg_(std::move(cfg)), dim_(dim) {
    if (dim < 1) throw DimensionMismatch("StreamState: dim must be >= 1");
    cfg_.validate();
    h_ = 1;
    if (cfg_.known_size > 0) {
      while (h_ < 62 && tree_capacity_(h_) < cfg_.known_size) ++h_;
    }
    enter_tree_();
  }

  int dim() const { return dim_; }
  long long points_seen() const { return points_seen_; }
  double weight_seen() const { return weight_seen_; }
  int tree_index() const { return h_; }
  long long bucket_budget() const { return s_h_; }
  const std::vector<WeightedPointSet>& buckets() const { return buckets_; }
  const std::vector<WeightedPointSet>& finished_roots() const {
    return roots_;
  }

  std::vector<int> live_levels() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
      if (!buckets_[i].empty()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  long long stored_points() const {
    long long t = 0;
    for (const auto& r : roots_) t += r.size();
    for (const auto& b : buckets_) t += b.size();
    return t;
  }

  double stored_weight() const {
    double t = 0.0;
    for (const auto& r : roots_) t += r.total_weight();
    for (const auto& b : buckets_) t += b.total_weight();
    return t;
  }

  std::optional<WeightedPointSet> insert(const Eigen::VectorXd& p,
                                         double w = 1.0) {
    if (p.size() != dim_) {
      throw DimensionMismatch("stream_insert: wrong point dimension");
    }
    if (!(w > 0.0)) {
      throw NonPositiveWeight("stream_insert: weight must be > 0");
    }
    buckets_[0].append(p, w);
    ++points_seen_;
    ++tree_points_;
    weight_seen_ += w;
    if (buckets_[0].size() < s_h_) return std::nullopt;
    cascade_();
    if (cfg_.known_size == 0 && tree_points_ >= tree_capacity_(h_)) {
      rollover_();
    }
    if (cfg_.emit_on_cascade) return query();
    return std::nullopt;
  }

  void insert_set(const WeightedPointSet& pts) {
    for (int i = 0; i < pts.size(); ++i) insert(pts.point(i), pts.weight(i));
  }

  // One reduction over every frozen root and live bucket, at the full
  // (eps, delta). Non-mutating; the seed is a function of the points seen,
  // so repeated queries of the same state agree.
  WeightedPointSet query() const {
    if (points_seen_ == 0) throw EmptyStream("stream_query: no points seen");
    WeightedPointSet all(dim_);
    for (const auto& r : roots_) all.append_all(r);
    for (const auto& b : buckets_) all.append_all(b);
    const std::uint64_t seed = derive_seed(
        cfg_.seed, {0ULL, static_cast<std::uint64_t>(points_seen_)});
    return run_inner_(all, cfg_.epsilon, cfg_.delta, seed, "final reduce");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = kFormat;
    j["dim"] = dim_;
    j["epsilon"] = cfg_.epsilon;
    j["delta"] = cfg_.delta;
    j["seed"] = cfg_.seed;
    j["known_size"] = cfg_.known_size;
    j["strict"] = cfg_.strict;
    j["enforce_weight_conservation"] = cfg_.enforce_weight_conservation;
    j["emit_on_cascade"] = cfg_.emit_on_cascade;
    j["halving"] = cfg_.halving.to_json();
    j["h"] = h_;
    j["points_seen"] = points_seen_;
    j["weight_seen"] = weight_seen_;
    j["tree_points"] = tree_points_;
    j["cascades"] = cascades_;
    j["buckets"] = nlohmann::json::array();
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
      if (buckets_[i].empty()) continue;
      nlohmann::json b;
      b["level"] = i;
      write_set_(buckets_[i], b);
      j["buckets"].push_back(std::move(b));
    }
    j["roots"] = nlohmann::json::array();
    for (const auto& r : roots_) {
      nlohmann::json b;
      write_set_(r, b);
      j["roots"].push_back(std::move(b));
    }
    return j;
  }

  static StreamState from_json(const nlohmann::json& j, InnerScheme inner) {
    if (!j.contains("format") || j.at("format").get<std::string>() != kFormat) {
      throw InvalidRange("StreamState: unrecognized checkpoint format");
    }
    StreamConfig cfg;
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.delta = j.at("delta").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.known_size = j.at("known_size").get<long long>();
    cfg.strict = j.at("strict").get<bool>();
    cfg.enforce_weight_conservation =
        j.at("enforce_weight_conservation").get<bool>();
    cfg.emit_on_cascade = j.at("emit_on_cascade").get<bool>();
    cfg.halving = HalvingFunction::from_json(j.at("halving"));
    cfg.inner = std::move(inner);
    cfg.validate();

    StreamState st;
    st.cfg_ = std::move(cfg);
    st.dim_ = j.at("dim").get<int>();
    if (st.dim_ < 1) throw DimensionMismatch("StreamState: dim must be >= 1");
    st.h_ = j.at("h").get<int>();
    if (st.h_ < 1) throw InvalidRange("StreamState: tree index must be >= 1");
    st.points_seen_ = j.at("points_seen").get<long long>();
    st.weight_seen_ = j.at("weight_seen").get<double>();
    st.tree_points_ = j.at("tree_points").get<long long>();
    st.cascades_ = j.at("cascades").get<long long>();
    st.enter_tree_();
    for (const auto& b : j.at("buckets")) {
      const auto level = b.at("level").get<std::size_t>();
      if (level >= st.buckets_.size()) {
        st.buckets_.resize(level + 1, WeightedPointSet(st.dim_));
      }
      st.buckets_[level] = read_set_(b, st.dim_);
    }
    for (const auto& b : j.at("roots")) {
      st.roots_.push_back(read_set_(b, st.dim_));
    }
    return st;
  }

 private:
  static constexpr const char* kFormat = "coregmm-stream-v1";

  StreamState() = default;

  long long tree_capacity_(int h) const {
    const long long s = cfg_.halving(h);
    if (h - 1 >= 62 || s > (1LL << 62) / (1LL << (h - 1))) return 1LL << 62;
    return (1LL << (h - 1)) * s;
  }

  void enter_tree_() {
    s_h_ = cfg_.halving(h_);
    if (cfg_.strict && !cfg_.halving.certified(h_)) {
      throw InvalidRange(
          "StreamState: halving schedule fails its sufficiency certificate "
          "at tree " +
          std::to_string(h_) + " (s(h) < 10 u(h)^3)");
    }
    buckets_.assign(static_cast<std::size_t>(h_) + 1, WeightedPointSet(dim_));
  }

  WeightedPointSet run_inner_(const WeightedPointSet& block, double eps,
                              double delta, std::uint64_t seed,
                              const std::string& where) const {
    WeightedPointSet out;
    try {
      out = cfg_.inner(block, eps, delta, seed);
    } catch (const std::exception& e) {
      throw InnerSchemeFailure("inner scheme failed at " + where + ": " +
                               e.what());
    }
    if (out.empty()) {
      throw InnerSchemeFailure("inner scheme returned an empty set at " +
                               where);
    }
    if (out.dim() != dim_) {
      throw InnerSchemeFailure("inner scheme changed the dimension at " +
                               where);
    }
    if (cfg_.enforce_weight_conservation) {
      const double in_w = block.total_weight();
      const double out_w = out.total_weight();
      if (std::abs(out_w - in_w) > 1e-6 * std::max(1.0, in_w)) {
        throw InnerSchemeFailure(
            "inner scheme does not preserve total weight at " + where);
      }
    }
    return out;
  }

  // Binary-counter increment: fold the full buffer upward, merging with each
  // occupied level, and park the carry at the first empty one.
  void cascade_() {
    ++cascades_;
    const double eps = cfg_.epsilon / h_;
    const double delta =
        std::max(cfg_.delta / std::pow(4.0, static_cast<double>(h_)), 1e-300);
    WeightedPointSet carry(dim_);
    std::size_t level = 0;
    while (level < buckets_.size() && !buckets_[level].empty()) {
      WeightedPointSet merged = std::move(carry);
      merged.append_all(buckets_[level]);
      buckets_[level] = WeightedPointSet(dim_);
      const std::uint64_t seed =
          derive_seed(cfg_.seed, {static_cast<std::uint64_t>(h_),
                                  static_cast<std::uint64_t>(level),
                                  static_cast<std::uint64_t>(cascades_)});
      carry = run_inner_(merged, eps, delta, seed,
                         "tree " + std::to_string(h_) + ", level " +
                             std::to_string(level) + ", cascade " +
                             std::to_string(cascades_));
      ++level;
    }
    if (level >= buckets_.size()) {
      buckets_.resize(level + 1, WeightedPointSet(dim_));
    }
    buckets_[level] = std::move(carry);
  }

  // The finished tree's counter is a single power of two, so exactly one
  // bucket is live; freeze it and start the next, taller tree.
  void rollover_() {
    WeightedPointSet root(dim_);
    for (const auto& b : buckets_) root.append_all(b);
    roots_.push_back(std::move(root));
    ++h_;
    tree_points_ = 0;
    enter_tree_();
  }

  static void write_set_(const WeightedPointSet& s, nlohmann::json& out) {
    nlohmann::json pts = nlohmann::json::array();
    for (int i = 0; i < s.size(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < s.dim(); ++c) row.push_back(s.points()(i, c));
      pts.push_back(std::move(row));
    }
    out["points"] = std::move(pts);
    nlohmann::json w = nlohmann::json::array();
    for (int i = 0; i < s.size(); ++i) w.push_back(s.weight(i));
    out["weights"] = std::move(w);
  }

  static WeightedPointSet read_set_(const nlohmann::json& in, int dim) {
    const auto& pts = in.at("points");
    const auto& ws = in.at("weights");
    if (pts.size() != ws.size()) {
      throw InvalidRange("StreamState: points/weights length mismatch");
    }
    Eigen::MatrixXd m(pts.size(), dim);
    Eigen::VectorXd w(ws.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto& row = pts[i];
      if (static_cast<int>(row.size()) != dim) {
        throw DimensionMismatch("StreamState: wrong point dimension");
      }
      for (int c = 0; c < dim; ++c) m(i, c) = row[c].get<double>();
      w[i] = ws[i].get<double>();
    }
    return WeightedPointSet(std::move(m), std::move(w));
  }

  StreamConfig cfg_;
  int dim_ = 0;
  int h_ = 1;
  long long s_h_ = 1;
  long long points_seen_ = 0;
  long long tree_points_ = 0;
  long long cascades_ = 0;
  double weight_seen_ = 0.0;
  std::vector<WeightedPointSet> buckets_;
  std::vector<WeightedPointSet> roots_;
};

inline std::optional<WeightedPointSet> stream_insert(StreamState& st,
                                                     const Eigen::VectorXd& p,
                                                     double w = 1.0) {
  return st.insert(p, w);
}

inline WeightedPointSet stream_query(const StreamState& st) {
  return st.query();
}

}  // namespace coregmm
