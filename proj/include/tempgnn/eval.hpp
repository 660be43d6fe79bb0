#pragma once

#include <cstddef>
#include <vector>

#include "tempgnn/data.hpp"
#include "tempgnn/error.hpp"
#include "tempgnn/graph.hpp"
#include "tempgnn/model.hpp"
#include "tempgnn/parallel.hpp"
#include "tempgnn/tensor.hpp"

namespace tempgnn {

struct EvalReport {
  double recall5 = 0.0;
  double mrr5 = 0.0;
  double recall20 = 0.0;
  double mrr20 = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> ranks;
};

// 1-based rank of the target under descending score order with ties broken
// by ascending item index.
inline std::size_t rank_of_target(const Tensor& scores, std::size_t target) {
  if (target >= scores.size()) {
    throw ValidationError("rank_of_target: target out of range");
  }
  double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > st || (scores[j] == st && j < target)) ++rank;
  }
  return rank;
}

inline EvalReport report_from_ranks(std::vector<std::size_t> ranks) {
  EvalReport report;
  report.count = ranks.size();
  for (std::size_t rank : ranks) {
    if (rank <= 5) {
      report.recall5 += 1.0;
      report.mrr5 += 1.0 / static_cast<double>(rank);
    }
    if (rank <= 20) {
      report.recall20 += 1.0;
      report.mrr20 += 1.0 / static_cast<double>(rank);
    }
  }
  if (report.count > 0) {
    double n = static_cast<double>(report.count);
    report.recall5 /= n;
    report.mrr5 /= n;
    report.recall20 /= n;
    report.mrr20 /= n;
  }
  report.ranks = std::move(ranks);
  return report;
}

// Ranks every instance by the model's output distribution. Instances are
// independent, so they fan out across threads; the metric averages run in
// instance order afterwards.
inline EvalReport evaluate_on_graphs(const ModelParams& params,
                                     const std::vector<LabeledInstance>& instances,
                                     const std::vector<SessionGraph>& graphs,
                                     std::size_t threads = 1) {
  if (instances.size() != graphs.size()) {
    throw ValidationError("evaluate: instance and graph counts differ");
  }
  std::vector<std::size_t> ranks(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    Forward fwd = forward_on_graph(instances[i], graphs[i], params);
    ranks[i] = rank_of_target(fwd.tape.value(fwd.probs),
                              instances[i].target_item);
  });
  return report_from_ranks(std::move(ranks));
}

inline EvalReport evaluate(const ModelParams& params,
                           const std::vector<LabeledInstance>& instances,
                           std::size_t threads = 1) {
  const ModelConfig& cfg = params.config;
  const Bucketizer<>* tn = cfg.tn.uses_bucket_table() ? &params.tn_bucketizer
                                                      : nullptr;
  const Bucketizer<>* te = cfg.te.uses_bucket_table() ? &params.te_bucketizer
                                                      : nullptr;
  std::vector<SessionGraph> graphs;
  graphs.reserve(instances.size());
  for (const LabeledInstance& inst : instances) {
    graphs.push_back(build_graph(inst, tn, te));
  }
  return evaluate_on_graphs(params, instances, graphs, threads);
}

}  // namespace tempgnn
