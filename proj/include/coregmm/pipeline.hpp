#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "coregmm/em.hpp"
#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/io.hpp"
#include "coregmm/points.hpp"
#include "coregmm/projclust.hpp"
#include "coregmm/rng.hpp"
#include "coregmm/sampler.hpp"
#include "coregmm/sensitivity.hpp"
#include "coregmm/smm.hpp"
#include "coregmm/streaming.hpp"

// End-to-end construction: embed points into R^(2d+1), bound per-point
// sensitivities by iterative max-norm coreset peeling, importance-sample m
// points, and strip the padding. Plus the uniform baseline, a synthetic
// ground-truth generator, and the error-vs-size experiment harness that
// compares them.

namespace coregmm {

enum class SchemeChoice { projective, kcenter };

inline std::string to_string(SchemeChoice s) {
  return s == SchemeChoice::projective ? "projective" : "kcenter";
}

inline SchemeChoice scheme_choice_from_string(const std::string& s) {
  if (s == "projective") return SchemeChoice::projective;
  if (s == "kcenter") return SchemeChoice::kcenter;
  throw InvalidRange("scheme_choice_from_string: unknown scheme " + s);
}

// The sample-size advice multiplies the total sensitivity by a
// dimension-of-queries term d'. The quartic form is the provable bound;
// the cubic variant is kept selectable because it appears in practice.
enum class VcModel { d4k4, k4d3 };

inline long long projective_vc_dimension(int d, int k, VcModel m) {
  if (d < 1 || k < 1) throw InvalidRange("projective_vc_dimension: d, k must be >= 1");
  const double dd = d;
  const double kk = k;
  const double v = m == VcModel::d4k4 ? dd * dd * dd * dd * kk * kk * kk * kk
                                      : kk * kk * kk * kk * dd * dd * dd;
  if (v > 2.0e9) {
    throw InvalidRange(
        "projective_vc_dimension: d' overflows the advice formula; pass an "
        "explicit sample size instead");
  }
  return static_cast<long long>(v);
}

struct PipelineConfig {
  int k = 1;
  double epsilon = 1.0 / 3.0;
  double delta = 0.1;
  int m_override = 0;  // 0: size from advised_sample_size
  SchemeChoice scheme = SchemeChoice::kcenter;
  double scheme_eps = 1.0 / 3.0;  // witness accuracy of the projective scheme
  GridConfig grid{};              // projective-scheme geometry; bound auto-grows
  VcModel vc_model = VcModel::d4k4;
  double sampler_c = 1.0;
  long long stream_chunk = 0;  // > 0: bounded-memory route through the stream
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw InvalidRange("PipelineConfig: k must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
      throw InvalidRange("PipelineConfig: epsilon must be in (0,1)");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidRange("PipelineConfig: delta must be in (0,1)");
    }
    if (m_override < 0) throw InvalidRange("PipelineConfig: m_override must be >= 0");
    if (!(scheme_eps > 0.0 && scheme_eps < 1.0)) {
      throw InvalidRange("PipelineConfig: scheme_eps must be in (0,1)");
    }
    if (stream_chunk < 0) {
      throw InvalidRange("PipelineConfig: stream_chunk must be >= 0");
    }
  }
};

struct PipelineInfo {
  int n = 0;
  int dim = 0;
  double total_sensitivity = 0.0;
  int advised_m = 0;  // 0 when an explicit size was given
  int m_used = 0;
  int output_size = 0;
  bool streamed = false;
  double build_ms = 0.0;
};

namespace detail {

// Rethrows stage errors with the stage name folded into the message,
// preserving the concrete error type.
template <class F>
auto with_stage(const std::string& stage, F&& f) -> std::invoke_result_t<F> {
  const auto tag = [&](const std::exception& e) {
    return "kgmm_coreset[" + stage + "]: " + e.what();
  };
  try {
    return f();
  } catch (const EmptySet& e) {
    throw EmptySet(tag(e));
  } catch (const InvalidRange& e) {
    throw InvalidRange(tag(e));
  } catch (const GridBoundExceeded& e) {
    throw GridBoundExceeded(tag(e));
  } catch (const RecursionBudgetExceeded& e) {
    throw RecursionBudgetExceeded(tag(e));
  } catch (const SchemeFailure& e) {
    throw SchemeFailure(tag(e));
  } catch (const ZeroTotalSensitivity& e) {
    throw ZeroTotalSensitivity(tag(e));
  } catch (const EmptyInput& e) {
    throw EmptyInput(tag(e));
  } catch (const DimensionMismatch& e) {
    throw DimensionMismatch(tag(e));
  } catch (const NonPositiveWeight& e) {
    throw NonPositiveWeight(tag(e));
  } catch (const InnerSchemeFailure& e) {
    throw InnerSchemeFailure(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

inline bool uniform_weights(const WeightedPointSet& p) {
  const double w0 = p.weight(0);
  for (int i = 1; i < p.size(); ++i) {
    if (p.weight(i) != w0) return false;
  }
  return true;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline WeightedPointSet kgmm_coreset(const WeightedPointSet& p,
                                     const PipelineConfig& cfg,
                                     PipelineInfo* info = nullptr);

namespace detail {

inline WeightedPointSet kgmm_coreset_offline(const WeightedPointSet& p,
                                             const PipelineConfig& cfg,
                                             PipelineInfo* info) {
  const WeightedPointSet embedded =
      with_stage("embed", [&] { return embed_set(p); });

  LinfScheme scheme = with_stage("scheme", [&] {
    if (cfg.scheme == SchemeChoice::kcenter) {
      return LinfScheme(LinfScheme::Kind::kcenter, cfg.k);
    }
    GridConfig grid = cfg.grid;
    const double max_abs = embedded.points().cwiseAbs().maxCoeff();
    grid.m = std::max<long long>(
        grid.m, static_cast<long long>(std::ceil(max_abs)) + 1);
    return LinfScheme(LinfScheme::Kind::projective, cfg.k, cfg.scheme_eps, grid);
  });

  // Unit-weight inputs take the whole-coreset-per-round peel; it gives the
  // same kind of bound and runs a round per coreset instead of per point.
  const SensitivityMap sens = with_stage("sensitivity", [&] {
    return uniform_weights(embedded)
               ? sensitivity_unweighted(embedded, cfg.epsilon, cfg.delta, scheme)
               : sensitivity_weighted(embedded, cfg.epsilon, cfg.delta, scheme);
  });

  SamplerConfig sc;
  sc.seed = cfg.seed;
  sc.epsilon = cfg.epsilon;
  sc.delta = cfg.delta;
  sc.c = cfg.sampler_c;
  int advised = 0;
  if (cfg.m_override > 0) {
    sc.m = cfg.m_override;
  } else {
    sc.m = with_stage("size-advice", [&] {
      const long long vc = projective_vc_dimension(p.dim(), cfg.k, cfg.vc_model);
      sc.vc_dimension = static_cast<int>(std::min<long long>(
          vc, std::numeric_limits<int>::max()));
      return advised_sample_size(sens.total, sc);
    });
    advised = sc.m;
  }

  const IndexedSample sample = with_stage(
      "sample", [&] { return importance_sample_indexed(embedded, sens, sc); });

  // The sampled indices refer to rows shared by the embedded set and the
  // input, so stripping the padding is a row lookup.
  Eigen::MatrixXd pts(sample.indices.size(), p.dim());
  Eigen::VectorXd w(sample.indices.size());
  for (std::size_t j = 0; j < sample.indices.size(); ++j) {
    pts.row(j) = p.points().row(sample.indices[j]);
    w[j] = sample.weights[j];
  }
  WeightedPointSet out(std::move(pts), std::move(w));

  if (info) {
    info->total_sensitivity = sens.total;
    info->advised_m = advised;
    info->m_used = sc.m;
    info->output_size = out.size();
  }
  return out;
}

inline WeightedPointSet kgmm_coreset_streamed(const WeightedPointSet& p,
                                              const PipelineConfig& cfg,
                                              PipelineInfo* info) {
  StreamConfig sc;
  sc.epsilon = std::min(cfg.epsilon, 0.45);
  sc.delta = std::min(cfg.delta, 0.45);
  sc.seed = derive_seed(cfg.seed, {0x73747265616dULL});
  sc.halving = HalvingFunction::constant(cfg.stream_chunk);
  sc.inner = [base = cfg](const WeightedPointSet& block, double eps,
                          double delta, std::uint64_t seed) {
    PipelineConfig inner = base;
    inner.stream_chunk = 0;
    inner.epsilon = std::min(eps, 1.0 - 1e-9);
    inner.delta = delta;
    inner.m_override = std::max(1, block.size() / 2);
    inner.seed = seed;
    return kgmm_coreset(block, inner, nullptr);
  };

  const WeightedPointSet reduced = with_stage("stream", [&] {
    StreamState st(p.dim(), sc);
    st.insert_set(p);
    return st.query();
  });

  // One finishing pass brings the reduced union down to the requested size.
  PipelineConfig fin = cfg;
  fin.stream_chunk = 0;
  fin.seed = derive_seed(cfg.seed, {0x66696e697368ULL});
  WeightedPointSet out = kgmm_coreset(reduced, fin, info);
  if (info) {
    info->streamed = true;
    info->n = p.size();
  }
  return out;
}

}  // namespace detail

// Coreset for the k-Gaussian-mixture likelihood: sensitivity bounds from
// max-norm peeling over the padded points drive an importance sample whose
// total weight matches the input's exactly. An explicit m_override wins
// over the theoretical size advice; inputs already at most that size are
// returned unchanged. With stream_chunk > 0 large inputs are pushed through
// the merge tree in bounded memory and finished with one offline pass.
inline WeightedPointSet kgmm_coreset(const WeightedPointSet& p,
                                     const PipelineConfig& cfg,
                                     PipelineInfo* info) {
  cfg.validate();
  if (p.empty()) throw EmptyInput("kgmm_coreset: empty input");

  const auto t0 = std::chrono::steady_clock::now();
  if (info) {
    *info = PipelineInfo{};
    info->n = p.size();
    info->dim = p.dim();
  }

  WeightedPointSet out(p.dim());
  if (cfg.m_override > 0 && p.size() <= cfg.m_override) {
    out = p;
    if (info) {
      info->m_used = cfg.m_override;
      info->output_size = out.size();
    }
  } else if (cfg.stream_chunk > 0 && p.size() > 2 * cfg.stream_chunk) {
    out = detail::kgmm_coreset_streamed(p, cfg, info);
  } else {
    out = detail::kgmm_coreset_offline(p, cfg, info);
  }

  if (info) {
    const auto t1 = std::chrono::steady_clock::now();
    info->n = p.size();
    info->dim = p.dim();
    info->build_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  return out;
}

inline WeightedPointSet kgmm_coreset(const WeightedPointSet& p, int k,
                                     double eps, double delta, int m_override,
                                     SchemeChoice scheme,
                                     std::uint64_t seed = 0) {
  PipelineConfig cfg;
  cfg.k = k;
  cfg.epsilon = eps;
  cfg.delta = delta;
  cfg.m_override = m_override;
  cfg.scheme = scheme;
  cfg.seed = seed;
  return kgmm_coreset(p, cfg);
}

// m i.i.d. draws over the points, each carrying an equal share of the total
// weight; repeated draws merge by summing, so the total is preserved
// exactly.
inline WeightedPointSet uniform_baseline(const WeightedPointSet& p, int m,
                                         std::uint64_t seed) {
  if (p.empty()) throw EmptyInput("uniform_baseline: empty input");
  if (m < 1) throw InvalidRange("uniform_baseline: m must be >= 1");
  const double share = p.total_weight() / m;
  std::vector<int> count(p.size(), 0);
  Rng rng(seed);
  for (int draw = 0; draw < m; ++draw) {
    count[static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(p.size())))]++;
  }
  WeightedPointSet out(p.dim());
  for (int i = 0; i < p.size(); ++i) {
    if (count[i] > 0) out.append(p.point(i), share * count[i]);
  }
  return out;
}

// Ground truth for synthetic experiments: well-separated components with
// rotated anisotropic covariances (eigenvalues geometrically spread by up
// to eig_ratio) and one deliberately rare component that small uniform
// samples tend to miss.
struct SynthConfig {
  int k = 6;
  int d = 5;
  long long n = 20000;
  double rare_weight = 0.02;  // mixture weight of the rare component
  double eig_ratio = 100.0;   // largest-to-smallest eigenvalue, rare component
  double scale = 0.06;        // geometric-mean eigenvalue of each covariance
  double rare_scale = 1.0;    // extra eigenvalue scale for the rare component
  double separation = 6.0;    // distance scale between component means
  std::uint64_t seed = 9001;

  void validate() const {
    if (k < 1) throw InvalidRange("SynthConfig: k must be >= 1");
    if (d < 1) throw InvalidRange("SynthConfig: d must be >= 1");
    if (n < 1) throw InvalidRange("SynthConfig: n must be >= 1");
    if (!(rare_weight > 0.0 && rare_weight < 1.0)) {
      throw InvalidRange("SynthConfig: rare_weight must be in (0,1)");
    }
    if (k > 1 && !(rare_weight <= 1.0 / k)) {
      throw InvalidRange("SynthConfig: rare_weight must not exceed 1/k");
    }
    if (!(eig_ratio >= 1.0)) {
      throw InvalidRange("SynthConfig: eig_ratio must be >= 1");
    }
    if (!(scale > 0.0)) throw InvalidRange("SynthConfig: scale must be > 0");
    if (!(rare_scale > 0.0)) {
      throw InvalidRange("SynthConfig: rare_scale must be > 0");
    }
    if (!(separation >= 0.0)) {
      throw InvalidRange("SynthConfig: separation must be >= 0");
    }
  }
};

inline GmmModel synth_ground_truth(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, {0x7472757468ULL}));
  const int k = cfg.k;
  const int d = cfg.d;

  std::vector<double> weights(k);
  if (k == 1) {
    weights[0] = 1.0;
  } else {
    const double rest = (1.0 - cfg.rare_weight) / (k - 1);
    weights[0] = cfg.rare_weight;
    for (int i = 1; i < k; ++i) weights[i] = rest;
    weights[k - 1] = 1.0 - std::accumulate(weights.begin(), weights.end() - 1, 0.0);
  }

  // Means: spread directions with the rare component pushed farther out.
  std::vector<Eigen::VectorXd> means(k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd dir(d);
    if (i < 2 * d) {
      dir = Eigen::VectorXd::Zero(d);
      dir[i / 2 % d] = (i % 2 == 0) ? 1.0 : -1.0;
    } else {
      for (int j = 0; j < d; ++j) dir[j] = rng.normal();
      dir.normalize();
    }
    Eigen::VectorXd jitter(d);
    for (int j = 0; j < d; ++j) jitter[j] = 0.1 * cfg.separation * rng.normal();
    const double reach = (i == 0) ? 1.8 * cfg.separation : cfg.separation;
    means[i] = reach * dir + jitter;
  }

  std::vector<GmmComponent> comps;
  comps.reserve(k);
  for (int i = 0; i < k; ++i) {
    // Rotated spectrum, geometric mean pinned to cfg.scale; the rare
    // component uses the full requested ratio, the rest a spread of it.
    const double ratio =
        (i == 0) ? cfg.eig_ratio
                 : std::pow(cfg.eig_ratio, 0.25 + 0.5 * rng.uniform01());
    const double comp_scale = (i == 0) ? cfg.scale * cfg.rare_scale : cfg.scale;
    Eigen::VectorXd lambda(d);
    for (int j = 0; j < d; ++j) {
      const double t = d == 1 ? 0.5 : static_cast<double>(j) / (d - 1);
      lambda[j] = comp_scale * std::pow(ratio, t - 0.5);
    }
    Eigen::MatrixXd g(d, d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) g(r, c) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd sigma = q * lambda.asDiagonal() * q.transpose();
    sigma = 0.5 * (sigma + sigma.transpose());
    comps.emplace_back(weights[i], means[i], PsdMatrix(sigma));
  }
  return GmmModel(std::move(comps));
}

inline WeightedPointSet sample_gmm(const GmmModel& model, long long n,
                                   std::uint64_t seed) {
  if (n < 1) throw InvalidRange("sample_gmm: n must be >= 1");
  const int d = model.dim();
  std::vector<double> weights(model.k());
  for (int i = 0; i < model.k(); ++i) weights[i] = model.component(i).weight;
  std::vector<Eigen::MatrixXd> chol(model.k());
  for (int i = 0; i < model.k(); ++i) {
    chol[i] = Eigen::LLT<Eigen::MatrixXd>(model.component(i).covariance.matrix())
                  .matrixL();
  }
  Rng rng(seed);
  Eigen::MatrixXd pts(n, d);
  Eigen::VectorXd z(d);
  for (long long r = 0; r < n; ++r) {
    const int c = static_cast<int>(rng.discrete(weights));
    for (int j = 0; j < d; ++j) z[j] = rng.normal();
    pts.row(r) = (model.component(c).mean + chol[c] * z).transpose();
  }
  return WeightedPointSet::with_unit_weights(std::move(pts));
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string dataset;  // CSV path; empty samples the synthetic ground truth
  SynthConfig synth{};
  int k = 6;
  std::vector<int> sizes;
  int trials = 1;
  std::vector<std::string> schemes = {"ours", "uniform"};
  int em_restarts = 3;    // restarts per coreset fit
  int em_max_iters = 150;
  double em_tol = 1e-7;
  // Covariance floor for every fit in the experiment. Small samples with
  // many components need a data-scale floor or the evaluation on the full
  // set is dominated by collapsed covariances instead of coverage.
  double em_eigen_floor = kEigenFloor;
  int full_restarts = 5;  // restarts of the full-data target fit
  double epsilon = 1.0 / 3.0;
  double delta = 0.1;
  double xi = 0.01;
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: no files written

  void validate() const {
    if (k < 1) throw InvalidRange("ExperimentConfig: k must be >= 1");
    if (sizes.empty()) throw InvalidRange("ExperimentConfig: sizes must be nonempty");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (sizes[i] < 1) throw InvalidRange("ExperimentConfig: sizes must be >= 1");
      if (i > 0 && sizes[i] <= sizes[i - 1]) {
        throw InvalidRange("ExperimentConfig: sizes must be strictly increasing");
      }
    }
    if (trials < 1) throw InvalidRange("ExperimentConfig: trials must be >= 1");
    if (schemes.empty()) {
      throw InvalidRange("ExperimentConfig: schemes must be nonempty");
    }
    for (const std::string& s : schemes) {
      if (s != "ours" && s != "uniform" && s != "kcenter-ours") {
        throw InvalidRange("ExperimentConfig: unknown scheme " + s);
      }
    }
    if (em_restarts < 1) throw InvalidRange("ExperimentConfig: em_restarts must be >= 1");
    if (em_max_iters < 1) throw InvalidRange("ExperimentConfig: em_max_iters must be >= 1");
    if (!(em_tol >= 0.0)) throw InvalidRange("ExperimentConfig: em_tol must be >= 0");
    if (!(em_eigen_floor > 0.0)) {
      throw InvalidRange("ExperimentConfig: em_eigen_floor must be > 0");
    }
    if (full_restarts < 1) throw InvalidRange("ExperimentConfig: full_restarts must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
      throw InvalidRange("ExperimentConfig: epsilon must be in (0,1)");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw InvalidRange("ExperimentConfig: delta must be in (0,1)");
    }
    if (!(xi > 0.0)) throw InvalidRange("ExperimentConfig: xi must be > 0");
    synth.validate();
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"k", c.k},
       {"d", c.d},
       {"n", c.n},
       {"rare_weight", c.rare_weight},
       {"eig_ratio", c.eig_ratio},
       {"rare_scale", c.rare_scale},
       {"scale", c.scale},
       {"separation", c.separation},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.k = j.value("k", c.k);
  c.d = j.value("d", c.d);
  c.n = j.value("n", c.n);
  c.rare_weight = j.value("rare_weight", c.rare_weight);
  c.eig_ratio = j.value("eig_ratio", c.eig_ratio);
  c.rare_scale = j.value("rare_scale", c.rare_scale);
  c.scale = j.value("scale", c.scale);
  c.separation = j.value("separation", c.separation);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"dataset", c.dataset},
       {"synth", c.synth},
       {"k", c.k},
       {"sizes", c.sizes},
       {"trials", c.trials},
       {"schemes", c.schemes},
       {"em_restarts", c.em_restarts},
       {"em_max_iters", c.em_max_iters},
       {"em_tol", c.em_tol},
       {"em_eigen_floor", c.em_eigen_floor},
       {"full_restarts", c.full_restarts},
       {"epsilon", c.epsilon},
       {"delta", c.delta},
       {"xi", c.xi},
       {"seed", c.seed},
       {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.dataset = j.value("dataset", c.dataset);
  if (j.contains("synth")) c.synth = j.at("synth").get<SynthConfig>();
  c.k = j.value("k", c.k);
  c.sizes = j.value("sizes", c.sizes);
  c.trials = j.value("trials", c.trials);
  c.schemes = j.value("schemes", c.schemes);
  c.em_restarts = j.value("em_restarts", c.em_restarts);
  c.em_max_iters = j.value("em_max_iters", c.em_max_iters);
  c.em_tol = j.value("em_tol", c.em_tol);
  c.em_eigen_floor = j.value("em_eigen_floor", c.em_eigen_floor);
  c.full_restarts = j.value("full_restarts", c.full_restarts);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.delta = j.value("delta", c.delta);
  c.xi = j.value("xi", c.xi);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
}

struct CellResult {
  std::string scheme;
  int size = 0;
  int trial = 0;
  double build_ms = 0.0;
  double fit_ms = 0.0;
  double nll_full = 0.0;      // mean per-point NLL of the cell's model on T
  double nll_full_sum = 0.0;  // raw sum
  double error = 0.0;         // |l_opt - nll_full|
  double excess = 0.0;        // nll_full minus the best full-data level
  bool ok = false;
  std::string failure;
  std::optional<GmmModel> model;
};

struct FitReport {
  int n = 0;
  int dim = 0;
  double l_org = 0.0;      // mean per-point NLL, single full-data fit
  double l_trg = 0.0;      // mean per-point NLL, best of full_restarts fits
  double l_opt = 0.0;      // |l_org - l_trg|
  double l_org_sum = 0.0;
  double l_trg_sum = 0.0;
  std::vector<CellResult> cells;

  struct Aggregate {
    std::string scheme;
    int size = 0;
    int trials_ok = 0;
    int trials_failed = 0;
    double median_error = 0.0;
    double q1_error = 0.0;
    double q3_error = 0.0;
    double median_excess = 0.0;
  };
  std::vector<Aggregate> aggregates;

  const Aggregate* find(const std::string& scheme, int size) const {
    for (const Aggregate& a : aggregates) {
      if (a.scheme == scheme && a.size == size) return &a;
    }
    return nullptr;
  }
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - lo;
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline int worker_count(int cells) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COREGMM_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw InvalidRange("COREGMM_THREADS is not an integer");
    }
  }
  return std::max(1, std::min(n, cells));
}

inline WeightedPointSet build_cell_coreset(const WeightedPointSet& data,
                                           const std::string& scheme, int size,
                                           const ExperimentConfig& cfg,
                                           std::uint64_t seed) {
  if (scheme == "uniform") return uniform_baseline(data, size, seed);
  // Both pipeline labels run the practical configuration (farthest-point
  // scheme, explicit size); they are seeded independently.
  PipelineConfig pc;
  pc.k = cfg.k;
  pc.epsilon = cfg.epsilon;
  pc.delta = cfg.delta;
  pc.m_override = size;
  pc.scheme = SchemeChoice::kcenter;
  pc.seed = seed;
  return kgmm_coreset(data, pc);
}

}  // namespace detail

// Full-data reference fits, then one coreset build + fit per
// (scheme, size, trial) cell on independent derived seeds; every model is
// scored on the full data. Cell failures are recorded and skipped, never
// fatal. Cells run on up to COREGMM_THREADS workers.
inline FitReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  const WeightedPointSet data = cfg.dataset.empty()
                                    ? sample_gmm(synth_ground_truth(cfg.synth),
                                                 cfg.synth.n, cfg.synth.seed)
                                    : read_points_csv(cfg.dataset);

  FitReport report;
  report.n = data.size();
  report.dim = data.dim();

  EmConfig em;
  em.k = cfg.k;
  em.max_iters = cfg.em_max_iters;
  em.tol = cfg.em_tol;
  em.eigen_floor = cfg.em_eigen_floor;

  EmConfig em_org = em;
  em_org.restarts = 1;
  em_org.seed = derive_seed(cfg.seed, {0x6f7267ULL});
  const GmmModel g_org = em_fit_weighted(data, em_org);

  EmConfig em_trg = em;
  em_trg.restarts = cfg.full_restarts;
  em_trg.seed = derive_seed(cfg.seed, {0x747267ULL});
  const GmmModel g_trg = em_fit_weighted(data, em_trg);
  const double total_w = data.total_weight();
  report.l_org_sum = neg_log_likelihood(data, g_org);
  report.l_trg_sum = neg_log_likelihood(data, g_trg);
  report.l_org = report.l_org_sum / total_w;
  report.l_trg = report.l_trg_sum / total_w;
  report.l_opt = std::abs(report.l_org - report.l_trg);
  const double best_full = std::min(report.l_org, report.l_trg);

  report.cells.reserve(cfg.schemes.size() * cfg.sizes.size() * cfg.trials);
  for (const std::string& scheme : cfg.schemes) {
    for (int size : cfg.sizes) {
      for (int trial = 0; trial < cfg.trials; ++trial) {
        CellResult cell;
        cell.scheme = scheme;
        cell.size = size;
        cell.trial = trial;
        report.cells.push_back(std::move(cell));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  const auto run_cells = [&] {
    for (std::size_t i = next.fetch_add(1); i < report.cells.size();
         i = next.fetch_add(1)) {
      CellResult& cell = report.cells[i];
      const std::uint64_t cell_seed = derive_seed(
          cfg.seed, {detail::fnv1a(cell.scheme),
                     static_cast<std::uint64_t>(cell.size),
                     static_cast<std::uint64_t>(cell.trial)});
      try {
        const auto t0 = std::chrono::steady_clock::now();
        const WeightedPointSet coreset = detail::build_cell_coreset(
            data, cell.scheme, cell.size, cfg, derive_seed(cell_seed, {0ULL}));
        const auto t1 = std::chrono::steady_clock::now();
        EmConfig em_cell = em;
        em_cell.restarts = cfg.em_restarts;
        em_cell.seed = derive_seed(cell_seed, {1ULL});
        const GmmModel model = em_fit_weighted(coreset, em_cell);
        const auto t2 = std::chrono::steady_clock::now();

        cell.build_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        cell.fit_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        cell.nll_full_sum = neg_log_likelihood(data, model);
        cell.nll_full = cell.nll_full_sum / total_w;
        cell.error = std::abs(report.l_opt - cell.nll_full);
        cell.excess = cell.nll_full - best_full;
        cell.model = model;
        cell.ok = true;
      } catch (const Error& e) {
        cell.ok = false;
        cell.failure = e.what();
      }
    }
  };

  const int workers = detail::worker_count(static_cast<int>(report.cells.size()));
  if (workers <= 1) {
    run_cells();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) pool.emplace_back(run_cells);
    for (std::thread& t : pool) t.join();
  }

  for (const std::string& scheme : cfg.schemes) {
    for (int size : cfg.sizes) {
      std::vector<double> errors;
      std::vector<double> excesses;
      int failed = 0;
      for (const CellResult& cell : report.cells) {
        if (cell.scheme != scheme || cell.size != size) continue;
        if (!cell.ok) {
          ++failed;
          continue;
        }
        errors.push_back(cell.error);
        excesses.push_back(cell.excess);
      }
      FitReport::Aggregate agg;
      agg.scheme = scheme;
      agg.size = size;
      agg.trials_ok = static_cast<int>(errors.size());
      agg.trials_failed = failed;
      if (!errors.empty()) {
        std::sort(errors.begin(), errors.end());
        std::sort(excesses.begin(), excesses.end());
        agg.median_error = detail::quantile_sorted(errors, 0.5);
        agg.q1_error = detail::quantile_sorted(errors, 0.25);
        agg.q3_error = detail::quantile_sorted(errors, 0.75);
        agg.median_excess = detail::quantile_sorted(excesses, 0.5);
      }
      report.aggregates.push_back(std::move(agg));
    }
  }

  return report;
}

inline void write_report_csv(const std::string& path, const FitReport& report) {
  std::ofstream out(path);
  if (!out) throw IoFailure("write_report_csv: cannot open " + path);
  out << "scheme,size,trial,build_ms,fit_ms,nll_full,error\n";
  for (const CellResult& c : report.cells) {
    if (!c.ok) continue;
    out << c.scheme << ',' << c.size << ',' << c.trial << ','
        << detail::format_double(c.build_ms) << ','
        << detail::format_double(c.fit_ms) << ','
        << detail::format_double(c.nll_full) << ','
        << detail::format_double(c.error) << "\n";
  }
  if (!out) throw IoFailure("write_report_csv: write failed for " + path);
}

inline void write_plot_csv(const std::string& path, const FitReport& report) {
  std::ofstream out(path);
  if (!out) throw IoFailure("write_plot_csv: cannot open " + path);
  out << "scheme,size,median_error\n";
  for (const FitReport::Aggregate& a : report.aggregates) {
    out << a.scheme << ',' << a.size << ','
        << detail::format_double(a.median_error) << "\n";
  }
  if (!out) throw IoFailure("write_plot_csv: write failed for " + path);
}

inline nlohmann::json summary_json(const FitReport& report,
                                   const ExperimentConfig& cfg) {
  nlohmann::json aggs = nlohmann::json::array();
  for (const FitReport::Aggregate& a : report.aggregates) {
    aggs.push_back({{"scheme", a.scheme},
                    {"size", a.size},
                    {"trials_ok", a.trials_ok},
                    {"trials_failed", a.trials_failed},
                    {"median_error", a.median_error},
                    {"q1_error", a.q1_error},
                    {"q3_error", a.q3_error},
                    {"median_excess", a.median_excess}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const CellResult& c : report.cells) {
    if (!c.ok) {
      failures.push_back({{"scheme", c.scheme},
                          {"size", c.size},
                          {"trial", c.trial},
                          {"failure", c.failure}});
    }
  }
  return {{"n", report.n},
          {"d", report.dim},
          {"l_org", report.l_org},
          {"l_trg", report.l_trg},
          {"l_opt", report.l_opt},
          {"l_org_sum", report.l_org_sum},
          {"l_trg_sum", report.l_trg_sum},
          {"aggregates", aggs},
          {"failures", failures},
          {"config", cfg}};
}

// Writes report.csv, plot.csv, and summary.json into cfg.output_dir.
inline void write_experiment_outputs(const ExperimentConfig& cfg,
                                     const FitReport& report) {
  if (cfg.output_dir.empty()) return;
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path dir(cfg.output_dir);
  write_report_csv((dir / "report.csv").string(), report);
  write_plot_csv((dir / "plot.csv").string(), report);
  std::ofstream out(dir / "summary.json");
  if (!out) throw IoFailure("write_experiment_outputs: cannot open summary.json");
  out << summary_json(report, cfg).dump(2) << "\n";
  if (!out) throw IoFailure("write_experiment_outputs: write failed for summary.json");
}

}  // namespace coregmm
