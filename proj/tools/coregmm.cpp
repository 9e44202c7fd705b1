// Command-line front end: coreset construction, EM fitting, model
// evaluation, the experiment harness, and a synthetic data generator.
// Data goes to stdout (or --output), diagnostics to stderr.
#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "coregmm/em.hpp"
#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/io.hpp"
#include "coregmm/pipeline.hpp"

namespace {

using namespace coregmm;

void emit_points(const std::string& path, const WeightedPointSet& p) {
  if (path.empty() || path == "-") {
    write_points_csv(std::cout, p);
  } else {
    write_points_csv(path, p);
  }
}

void emit_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(path);
    if (!out) throw IoFailure("cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoFailure("write failed for " + path);
  }
}

int run_coreset(const std::string& input, int k, int size, double epsilon,
                double delta, double xi, const std::string& scheme,
                long long stream_chunk, std::uint64_t seed,
                const std::string& output) {
  const WeightedPointSet p = read_points_csv(input);
  PipelineConfig cfg;
  cfg.k = k;
  cfg.epsilon = epsilon;
  cfg.delta = delta;
  cfg.m_override = size;
  cfg.scheme = scheme_choice_from_string(scheme);
  cfg.stream_chunk = stream_chunk;
  cfg.seed = seed;

  PipelineInfo info;
  const WeightedPointSet c = kgmm_coreset(p, cfg, &info);
  emit_points(output, c);
  // xi parameterizes the approximation guarantee being targeted, not the
  // construction; it is echoed so runs are self-describing.
  std::cerr << "coreset: n " << info.n << " d " << info.dim << " out "
            << info.output_size << " m " << info.m_used << " advised "
            << info.advised_m << " total_sensitivity "
            << info.total_sensitivity << " xi " << xi << " streamed "
            << (info.streamed ? "yes" : "no") << " build_ms " << info.build_ms
            << "\n";
  return 0;
}

int run_fit(const std::string& input, int k, int restarts, int iters,
            double tol, double floor, std::uint64_t seed,
            const std::string& output) {
  const WeightedPointSet p = read_points_csv(input);
  EmConfig cfg;
  cfg.k = k;
  cfg.restarts = restarts;
  cfg.max_iters = iters;
  cfg.tol = tol;
  cfg.eigen_floor = floor;
  cfg.seed = seed;

  EmTrace trace;
  const GmmModel model = em_fit_weighted(p, cfg, &trace);
  emit_json(output, gmm_to_json(model));
  std::cerr << "fit: n " << p.size() << " d " << p.dim() << " nll_mean "
            << neg_log_likelihood(p, model) / p.total_weight() << " restarts "
            << restarts << " best " << trace.best_restart << " failed "
            << trace.failures.size() << "\n";
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path) {
  const GmmModel model = load_gmm_json(model_path);
  const WeightedPointSet p = read_points_csv(data_path);
  const double sum = neg_log_likelihood(p, model);
  const double w = p.total_weight();
  emit_json("", nlohmann::json{{"n", p.size()},
                               {"d", p.dim()},
                               {"total_weight", w},
                               {"nll_sum", sum},
                               {"nll_mean", sum / w}});
  return 0;
}

int run_experiment_cmd(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw IoFailure("cannot open " + config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseFailure(std::string("experiment config: ") + e.what());
  }
  const ExperimentConfig cfg = j.get<ExperimentConfig>();
  const FitReport report = run_experiment(cfg);
  write_experiment_outputs(cfg, report);
  emit_json("", summary_json(report, cfg));
  return 0;
}

int run_synth(const SynthConfig& cfg, const std::string& output,
              const std::string& model_out) {
  const GmmModel truth = synth_ground_truth(cfg);
  emit_points(output, sample_gmm(truth, cfg.n, cfg.seed));
  if (!model_out.empty()) save_gmm_json(model_out, truth);
  std::cerr << "synth: k " << cfg.k << " d " << cfg.d << " n " << cfg.n
            << " seed " << cfg.seed << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coreset construction toolkit for Gaussian mixture models"};
  app.require_subcommand(1);

  // coreset
  std::string in_path;
  std::string out_path;
  int k = 1;
  int size = 0;
  double epsilon = 1.0 / 3.0;
  double delta = 0.1;
  double xi = 0.01;
  std::string scheme = "kcenter";
  long long stream_chunk = 0;
  std::uint64_t seed = 0;
  CLI::App* coreset = app.add_subcommand(
      "coreset", "compress a point set into a weighted coreset");
  coreset->add_option("--input", in_path, "input points CSV")->required();
  coreset->add_option("--k", k, "number of mixture components targeted")
      ->required();
  coreset->add_option("--size", size,
                      "coreset size (0 takes the advised sample size)");
  coreset->add_option("--epsilon", epsilon, "approximation parameter");
  coreset->add_option("--delta", delta, "failure probability");
  coreset->add_option("--xi", xi, "surrogate shift the guarantee targets");
  coreset->add_option("--scheme", scheme, "projective|kcenter")
      ->check(CLI::IsMember({"projective", "kcenter"}));
  coreset->add_option("--stream-chunk", stream_chunk,
                      "process the input in chunks of this many points");
  coreset->add_option("--seed", seed, "RNG seed");
  coreset->add_option("--output", out_path, "coreset CSV path (- for stdout)");

  // fit
  std::string fit_in;
  std::string fit_out;
  int fit_k = 1;
  int restarts = 1;
  int iters = 100;
  double tol = 1e-8;
  double floor = coregmm::kEigenFloor;
  std::uint64_t fit_seed = 0;
  CLI::App* fit = app.add_subcommand(
      "fit", "fit a Gaussian mixture to weighted points with EM");
  fit->add_option("--input", fit_in, "input points CSV")->required();
  fit->add_option("--k", fit_k, "number of mixture components")->required();
  fit->add_option("--restarts", restarts, "independent EM restarts");
  fit->add_option("--iters", iters, "maximum EM iterations");
  fit->add_option("--tol", tol, "relative NLL stopping tolerance");
  fit->add_option("--floor", floor, "covariance eigenvalue floor");
  fit->add_option("--seed", fit_seed, "RNG seed");
  fit->add_option("--output", fit_out, "model JSON path (- for stdout)");

  // eval
  std::string model_path;
  std::string data_path;
  CLI::App* eval = app.add_subcommand(
      "eval", "score a mixture model on a weighted point set");
  eval->add_option("--model", model_path, "model JSON path")->required();
  eval->add_option("--data", data_path, "points CSV path")->required();

  // experiment
  std::string config_path;
  CLI::App* experiment = app.add_subcommand(
      "experiment", "run the coreset-vs-baseline fitting harness");
  experiment->add_option("--config", config_path, "experiment config JSON")
      ->required();

  // synth
  coregmm::SynthConfig synth_cfg;
  std::string synth_out;
  std::string synth_model;
  CLI::App* synth = app.add_subcommand(
      "synth", "sample points from a synthetic ground-truth mixture");
  synth->add_option("--k", synth_cfg.k, "mixture components");
  synth->add_option("--d", synth_cfg.d, "dimension");
  synth->add_option("--n", synth_cfg.n, "points to sample");
  synth->add_option("--seed", synth_cfg.seed, "RNG seed");
  synth->add_option("--rare-weight", synth_cfg.rare_weight,
                    "mixture weight of the rare component");
  synth->add_option("--eig-ratio", synth_cfg.eig_ratio,
                    "covariance eigenvalue ratio");
  synth->add_option("--rare-scale", synth_cfg.rare_scale,
                    "extra eigenvalue scale of the rare component");
  synth->add_option("--separation", synth_cfg.separation,
                    "distance scale between component means");
  synth->add_option("--output", synth_out, "points CSV path (- for stdout)");
  synth->add_option("--model-out", synth_model,
                    "also save the ground-truth model JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (coreset->parsed()) {
      return run_coreset(in_path, k, size, epsilon, delta, xi, scheme,
                         stream_chunk, seed, out_path);
    }
    if (fit->parsed()) {
      return run_fit(fit_in, fit_k, restarts, iters, tol, floor, fit_seed,
                     fit_out);
    }
    if (eval->parsed()) return run_eval(model_path, data_path);
    if (experiment->parsed()) return run_experiment_cmd(config_path);
    if (synth->parsed()) return run_synth(synth_cfg, synth_out, synth_model);
  } catch (const coregmm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
