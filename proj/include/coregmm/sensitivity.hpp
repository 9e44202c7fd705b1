#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/points.hpp"
#include "coregmm/projclust.hpp"

// Per-point sensitivity bounds from iterative linf-coreset peeling. Round
// after round, a max-norm coreset of the still-alive points is built; being
// covered only from round i onward converts into the bound (1+eps)/i. The
// weighted variant simulates the same peel on a virtual multiset holding
// ceil(w/(eps*w_min)) copies of each point without materializing it: the
// copies of the least-duplicated coreset member drain over a run of virtual
// rounds whose harmonic mass is added in closed form.

namespace coregmm {

struct SensitivityMap {
  std::vector<double> values;  // one strictly positive bound per input point
  double total = 0.0;          // sum of values
};

// Any peeling-compatible coreset builder: returns local indices into the
// subset it was handed, given a failure-probability share.
template <class S>
concept PeelScheme = requires(S s, const WeightedPointSet& p, double delta) {
  { s.construct(p, delta) } -> std::convertible_to<std::vector<int>>;
};

namespace detail {

// Closed-form stand-in for sum_{j=i}^m 1/j, valid for i >= 2 and m >= i-1.
// The final slack term turns the two-sided approximation into a strict
// overestimate; at m = i-1 (an empty run) only the slack survives.
inline double harmonic_window_raw(long long i, long long m) {
  const double im1 = static_cast<double>(i - 1);
  return std::log(static_cast<double>(m) / im1) + 0.5 / static_cast<double>(m) -
         0.5 / im1 + 1.0 / (im1 * im1);
}

// First-run form for rounds 1..m, where the general window's i-1 terms blow
// up: ln(m) + 1/(2m).
inline double harmonic_head(long long m) {
  return std::log(static_cast<double>(m)) + 0.5 / static_cast<double>(m);
}

// Runs the scheme on the alive subset and maps its output back to original
// indices. Anything malformed (an exception, no points, out-of-range or
// duplicate indices) is reported as SchemeFailure.
template <PeelScheme S>
std::vector<int> peel_round(S& scheme, const WeightedPointSet& all,
                            const std::vector<int>& alive, double delta) {
  WeightedPointSet sub = all.subset(alive);
  std::vector<int> local;
  try {
    local = scheme.construct(sub, delta);
  } catch (const SchemeFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemeFailure(std::string("linf scheme failed: ") + e.what());
  }
  if (local.empty()) throw SchemeFailure("linf scheme returned no points");
  std::vector<char> seen(alive.size(), 0);
  std::vector<int> out;
  out.reserve(local.size());
  for (int j : local) {
    if (j < 0 || j >= static_cast<int>(alive.size())) {
      throw SchemeFailure("linf scheme returned an out-of-range index");
    }
    if (seen[j]) throw SchemeFailure("linf scheme returned a duplicate index");
    seen[j] = 1;
    out.push_back(alive[j]);
  }
  return out;
}

inline void check_peel_params(const WeightedPointSet& p, double eps, double delta,
                              const char* who) {
  if (p.empty()) throw EmptySet(std::string(who) + ": empty input");
  if (!(eps > 0.0)) throw InvalidRange(std::string(who) + ": eps must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw InvalidRange(std::string(who) + ": delta must be in (0,1)");
  }
}

}  // namespace detail

// Approximates sum_{j=i}^m 1/j for m >= i >= 2. The core (without the final
// 1/(i-1)^2 term) lands within (-1/(i-1)^2, 1/m^2] of the true sum, so the
// returned value always overestimates, by at most 1/m^2 + 1/(i-1)^2.
inline double harmonic_window(long long i, long long m) {
  if (i < 2) throw InvalidRange("harmonic_window: i must be >= 2");
  if (m < i) throw InvalidRange("harmonic_window: m must be >= i");
  return detail::harmonic_window_raw(i, m);
}

// One linf coreset per round is peeled off the remaining points; members of
// the round-i coreset get sensitivity (1+eps)/i and leave the pool. The
// failure budget is split as delta/n across the at-most-n scheme calls.
template <PeelScheme S>
SensitivityMap sensitivity_unweighted(const WeightedPointSet& p, double eps,
                                      double delta, S& scheme) {
  detail::check_peel_params(p, eps, delta, "sensitivity_unweighted");
  const int n = p.size();
  const double round_delta = delta / n;

  SensitivityMap out;
  out.values.assign(n, 0.0);
  std::vector<int> alive(n);
  std::iota(alive.begin(), alive.end(), 0);
  std::vector<char> removed(n, 0);

  long long i = 1;
  while (!alive.empty()) {
    const std::vector<int> chosen = detail::peel_round(scheme, p, alive, round_delta);
    const double s = (1.0 + eps) / static_cast<double>(i);
    for (int idx : chosen) {
      out.values[idx] = s;
      removed[idx] = 1;
    }
    std::vector<int> next;
    next.reserve(alive.size() - chosen.size());
    for (int idx : alive) {
      if (!removed[idx]) next.push_back(idx);
    }
    alive.swap(next);
    ++i;
  }

  out.total = std::accumulate(out.values.begin(), out.values.end(), 0.0);
  return out;
}

// Weighted peel. Each point stands for h(p) = ceil(w(p)/(eps*w_min)) copies
// of itself; per round the least-duplicated coreset member q drains all its
// remaining copies at once, advancing the virtual clock from i to i + h(q).
// Every coreset member collects the harmonic mass of that whole run (with
// copies, that run would have been h(q) unweighted rounds at 1/i each), then
// q alone is removed. Runs exactly n rounds.
template <PeelScheme S>
SensitivityMap sensitivity_weighted(const WeightedPointSet& p, double eps,
                                    double delta, S& scheme) {
  detail::check_peel_params(p, eps, delta, "sensitivity_weighted");
  const int n = p.size();
  const double round_delta = delta / n;
  const double w_min = p.min_weight();

  // Duplicate counts. The virtual clock sums them, so cap each at 1e12 to
  // keep the total exactly representable in 64 bits.
  std::vector<long long> h(n);
  for (int j = 0; j < n; ++j) {
    const double raw = p.weight(j) / (eps * w_min);
    // Integer-valued ratios can land an ulp high after the divisions and
    // ceil would then charge a whole extra virtual round; shave a few ulps.
    const double copies = std::ceil(raw * (1.0 - 5e-15));
    if (!(copies <= 1e12)) {
      throw InvalidRange("sensitivity_weighted: weight spread too large for the virtual clock");
    }
    h[j] = static_cast<long long>(copies);
  }

  SensitivityMap out;
  out.values.assign(n, 0.0);
  std::vector<int> alive(n);
  std::iota(alive.begin(), alive.end(), 0);

  const double one_eps = 1.0 + eps;
  long long i = 1;
  while (!alive.empty()) {
    const std::vector<int> chosen = detail::peel_round(scheme, p, alive, round_delta);

    int q = chosen.front();
    for (int c : chosen) {
      if (h[c] < h[q] || (h[c] == h[q] && c < q)) q = c;
    }
    const long long hq = h[q];  // snapshot: the loop below zeroes h[q]
    const long long m = i + hq - 1;

    // Rounds 1..m have no (i-1) terms; later runs use the overestimating
    // window, which degenerates to bare slack when hq = 0 (m = i-1).
    const double inc = (i == 1) ? one_eps * detail::harmonic_head(m)
                                : one_eps * one_eps * detail::harmonic_window_raw(i, m);
    for (int c : chosen) {
      out.values[c] += inc;
      h[c] -= hq;
    }

    alive.erase(std::find(alive.begin(), alive.end(), q));
    i = m + 1;
  }

  out.total = std::accumulate(out.values.begin(), out.values.end(), 0.0);
  return out;
}

}  // namespace coregmm
