// End-to-end walkthrough: sample a synthetic mixture, compress it to a
// coreset, fit a model on the coreset, and compare against training on
// the full data.
#include <iostream>

#include "coregmm/em.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/pipeline.hpp"

int main() {
  using namespace coregmm;

  SynthConfig synth;
  synth.k = 4;
  synth.d = 3;
  synth.n = 10000;
  synth.seed = 42;
  const GmmModel truth = synth_ground_truth(synth);
  const WeightedPointSet data = sample_gmm(truth, synth.n, synth.seed);
  std::cout << "data: " << data.size() << " points in R^" << data.dim()
            << "\n";

  PipelineConfig pc;
  pc.k = synth.k;
  pc.m_override = 300;
  pc.seed = 1;
  PipelineInfo info;
  const WeightedPointSet coreset = kgmm_coreset(data, pc, &info);
  std::cout << "coreset: " << coreset.size() << " points, total weight "
            << coreset.total_weight() << ", built in " << info.build_ms
            << " ms (total sensitivity " << info.total_sensitivity << ")\n";

  EmConfig em;
  em.k = synth.k;
  em.restarts = 3;
  em.seed = 2;
  const GmmModel on_coreset = em_fit_weighted(coreset, em);
  const GmmModel on_full = em_fit_weighted(data, em);

  const double n = data.total_weight();
  std::cout << "mean NLL on the full data\n"
            << "  ground truth     " << neg_log_likelihood(data, truth) / n
            << "\n"
            << "  fit on full data " << neg_log_likelihood(data, on_full) / n
            << "\n"
            << "  fit on coreset   "
            << neg_log_likelihood(data, on_coreset) / n << "\n";

  // The same construction, consuming the input in bounded-memory chunks.
  pc.stream_chunk = 1024;
  const WeightedPointSet streamed = kgmm_coreset(data, pc, &info);
  std::cout << "streamed coreset: " << streamed.size()
            << " points, total weight " << streamed.total_weight() << "\n";
  return 0;
}
