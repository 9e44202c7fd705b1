#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "coregmm/errors.hpp"
#include "coregmm/points.hpp"
#include "coregmm/rng.hpp"
#include "coregmm/sensitivity.hpp"

// Sensitivity-proportional importance sampling. Points whose share of the
// adjusted sensitivity mass exceeds 1/m enter the coreset outright at their
// input weight; the remainder is sampled m times with replacement at
// probability proportional to that mass, with inverse-probability weights.
// A final rescale pins the coreset's total weight to the input's exactly.

namespace coregmm {

struct SamplerConfig {
  int m = 1;                 // target sample count
  std::uint64_t seed = 0;
  int vc_dimension = 1;      // d', only used by the size advice
  double epsilon = 0.2;      // only used by the size advice
  double delta = 0.1;        // only used by the size advice
  double c = 1.0;            // advice constant; unstated in theory, default 1

  void validate() const {
    if (m < 1) throw InvalidRange("SamplerConfig: m must be >= 1");
    if (vc_dimension < 1) throw InvalidRange("SamplerConfig: vc_dimension must be >= 1");
    // The closed boundary keeps eps = 1 advice arithmetic expressible.
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
      throw InvalidRange("SamplerConfig: epsilon must be in (0,1]");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidRange("SamplerConfig: delta must be in (0,1)");
    }
    if (!(c > 0.0)) throw InvalidRange("SamplerConfig: c must be > 0");
  }
};

// ceil(c*(t+1)/eps^2 * (d' ln(t+2) + ln(1/delta))): the sample count at which
// the sampled set is an eps-coreset with probability 1-delta. Advisory; the
// CLI takes the desired size directly.
inline int advised_sample_size(double total_sensitivity, const SamplerConfig& cfg) {
  cfg.validate();
  if (!(total_sensitivity >= 0.0)) {
    throw InvalidRange("advised_sample_size: total sensitivity must be >= 0");
  }
  const double t = total_sensitivity;
  const double value = cfg.c * (t + 1.0) / (cfg.epsilon * cfg.epsilon) *
                       (cfg.vc_dimension * std::log(t + 2.0) + std::log(1.0 / cfg.delta));
  return static_cast<int>(std::ceil(value));
}

// Sample with provenance: original indices (ascending), final weights, and
// the pre-rescale weights (deterministic members carry w(p), sampled members
// w(q)/(m*Pr(q)) summed over repeat draws).
struct IndexedSample {
  std::vector<int> indices;
  std::vector<double> weights;
  std::vector<double> raw_weights;
};

inline IndexedSample importance_sample_indexed(const WeightedPointSet& p,
                                               const SensitivityMap& s,
                                               const SamplerConfig& cfg) {
  cfg.validate();
  if (p.empty()) throw EmptyInput("importance_sample: empty input");
  const int n = p.size();
  if (static_cast<int>(s.values.size()) != n) {
    throw DimensionMismatch("importance_sample: sensitivity map size mismatch");
  }
  for (double v : s.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidRange("importance_sample: sensitivity values must be finite and >= 0");
    }
  }
  const double total_w = p.total_weight();

  // Blend in each point's weight share so no sampled weight can explode.
  std::vector<double> sp(n);
  double total_sp = 0.0;
  for (int i = 0; i < n; ++i) {
    sp[i] = s.values[i] + p.weight(i) / total_w;
    total_sp += sp[i];
  }
  if (!(total_sp > 0.0)) {
    throw ZeroTotalSensitivity("importance_sample: adjusted sensitivity mass is not positive");
  }

  // Points holding at least a 1/m share skip the lottery entirely.
  const int m = cfg.m;
  std::vector<char> fixed(n, 0);
  std::vector<double> raw(n, 0.0);
  std::vector<int> rest;
  rest.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (sp[i] * m >= total_sp) {
      fixed[i] = 1;
      raw[i] = p.weight(i);
    } else {
      rest.push_back(i);
    }
  }

  if (!rest.empty()) {
    std::vector<double> cum(rest.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < rest.size(); ++j) {
      acc += sp[rest[j]];
      cum[j] = acc;
    }
    const double rest_mass = acc;
    if (!(rest_mass > 0.0)) {
      throw ZeroTotalSensitivity("importance_sample: remainder mass is not positive");
    }
    Rng rng(cfg.seed);
    for (int draw = 0; draw < m; ++draw) {
      const double x = rng.uniform01() * rest_mass;
      const auto it = std::upper_bound(cum.begin(), cum.end(), x);
      const std::size_t j = std::min<std::size_t>(it - cum.begin(), rest.size() - 1);
      const int q = rest[j];
      const double pr = sp[q] / rest_mass;
      raw[q] += p.weight(q) / (m * pr);
    }
  }

  IndexedSample out;
  double raw_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (raw[i] > 0.0 || fixed[i]) {
      out.indices.push_back(i);
      out.raw_weights.push_back(raw[i]);
      raw_sum += raw[i];
    }
  }
  const double scale = total_w / raw_sum;
  out.weights.resize(out.indices.size());
  for (std::size_t j = 0; j < out.indices.size(); ++j) {
    out.weights[j] = out.raw_weights[j] * scale;
  }
  return out;
}

inline WeightedPointSet importance_sample(const WeightedPointSet& p, const SensitivityMap& s,
                                          const SamplerConfig& cfg) {
  const IndexedSample sample = importance_sample_indexed(p, s, cfg);
  Eigen::MatrixXd pts(sample.indices.size(), p.dim());
  Eigen::VectorXd w(sample.indices.size());
  for (std::size_t j = 0; j < sample.indices.size(); ++j) {
    pts.row(j) = p.points().row(sample.indices[j]);
    w[j] = sample.weights[j];
  }
  return WeightedPointSet(std::move(pts), std::move(w));
}

}  // namespace coregmm
