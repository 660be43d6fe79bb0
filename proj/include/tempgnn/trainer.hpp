#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tempgnn/adam.hpp"
#include "tempgnn/config.hpp"
#include "tempgnn/data.hpp"
#include "tempgnn/eval.hpp"
#include "tempgnn/graph.hpp"
#include "tempgnn/model.hpp"
#include "tempgnn/parallel.hpp"

namespace tempgnn {

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_r20 = 0.0;
  double val_m20 = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;  // elapsed since training start
};

struct TrainResult {
  ModelParams params;
  std::size_t best_epoch = 0;
  EvalReport best_val;
  std::vector<EpochRow> rows;
  std::vector<std::string> warnings;
  std::size_t clamped_tn_diffs = 0;
};

// Node diffs look back from the prediction click, edge diffs between
// consecutive prefix events; both pools feed the bucket fitting.
inline void collect_diffs(const std::vector<LabeledInstance>& instances,
                          std::vector<std::int64_t>& tn_diffs,
                          std::vector<std::int64_t>& te_diffs) {
  for (const LabeledInstance& inst : instances) {
    for (const IndexedEvent& e : inst.prefix) {
      tn_diffs.push_back(inst.prediction_timestamp - e.timestamp);
    }
    for (std::size_t j = 1; j < inst.prefix.size(); ++j) {
      te_diffs.push_back(inst.prefix[j].timestamp -
                         inst.prefix[j - 1].timestamp);
    }
  }
}

inline void fit_temporal_tables(ModelParams& params,
                                const std::vector<LabeledInstance>& instances,
                                std::vector<std::string>& warnings) {
  const ModelConfig& cfg = params.config;
  std::vector<std::int64_t> tn_diffs, te_diffs;
  collect_diffs(instances, tn_diffs, te_diffs);
  if (te_diffs.empty()) {
    if (cfg.te.uses_diff()) {
      warnings.push_back(
          "no consecutive prefix events; edge time buckets fit on {0}");
    }
    te_diffs.push_back(0);
  }
  auto fit = [&](const EncoderSpec& spec, std::vector<std::int64_t>& diffs,
                 std::size_t buckets, Bucketizer<>& bucketizer,
                 DiffRange& range) {
    if (spec.kind == EncoderKind::kQuantile) {
      bucketizer = fit_quantile_buckets(diffs, buckets, &warnings);
    } else if (spec.kind == EncoderKind::kBucket) {
      bucketizer = fit_uniform_buckets(diffs, buckets, &warnings);
    } else if (spec.kind == EncoderKind::kConstant) {
      range = DiffRange::fit(diffs);
    }
  };
  fit(cfg.tn, tn_diffs, cfg.tn_buckets, params.tn_bucketizer, params.tn_range);
  fit(cfg.te, te_diffs, cfg.te_buckets, params.te_bucketizer, params.te_range);
}

inline std::vector<SessionGraph> build_graphs(
    const ModelParams& params, const std::vector<LabeledInstance>& instances,
    GraphBuildStats* stats = nullptr) {
  const ModelConfig& cfg = params.config;
  const Bucketizer<>* tn = cfg.tn.uses_bucket_table() ? &params.tn_bucketizer
                                                      : nullptr;
  const Bucketizer<>* te = cfg.te.uses_bucket_table() ? &params.te_bucketizer
                                                      : nullptr;
  std::vector<SessionGraph> graphs;
  graphs.reserve(instances.size());
  for (const LabeledInstance& inst : instances) {
    graphs.push_back(build_graph(inst, tn, te, stats));
  }
  return graphs;
}

// Last `fraction` of sessions by final-event time becomes the validation
// slice; everything else trains. Input order is preserved on both sides.
inline std::pair<std::vector<IndexedSession>, std::vector<IndexedSession>>
carve_validation(std::vector<IndexedSession> sessions, double fraction) {
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(sessions.size())));
  if (n_val == 0) return {std::move(sessions), {}};
  std::vector<std::size_t> order(sessions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sessions[a].events.back().timestamp <
           sessions[b].events.back().timestamp;
  });
  std::vector<bool> is_val(sessions.size(), false);
  for (std::size_t i = sessions.size() - n_val; i < sessions.size(); ++i) {
    is_val[order[i]] = true;
  }
  std::vector<IndexedSession> train, val;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    (is_val[i] ? val : train).push_back(std::move(sessions[i]));
  }
  return {std::move(train), std::move(val)};
}

namespace detail {

// Per-instance gradients land in private slots, then fold into the
// accumulator strictly in batch order, so any worker count produces
// bitwise-identical sums.
struct BatchWorkspace {
  std::vector<double> losses;
  std::vector<std::vector<Tensor>> grads;

  BatchWorkspace(std::size_t slots, const ModelParams& params) {
    losses.resize(slots);
    grads.resize(slots);
    for (auto& g : grads) {
      params.visit([&](const char*, const Tensor& t) {
        g.push_back(Tensor::zeros(t.shape));
      });
    }
  }
};

}  // namespace detail

inline TrainResult train(const RunConfig& rc,
                         std::vector<IndexedSession> sessions,
                         std::size_t item_count) {
  rc.validate();
  if (sessions.empty()) throw ValidationError("train: no sessions");
  if (item_count < 1) throw ValidationError("train: empty vocabulary");

  TrainResult result;
  auto [train_sessions, val_sessions] =
      carve_validation(std::move(sessions), rc.val_fraction);
  std::vector<LabeledInstance> train_instances =
      expand(train_sessions, rc.max_len);
  std::vector<LabeledInstance> val_instances = expand(val_sessions, rc.max_len);
  if (train_instances.empty()) {
    throw ValidationError("train: no training instances after expansion");
  }

  ModelConfig cfg = rc.model(item_count);
  ModelParams params = init_params(cfg, rc.seed);
  fit_temporal_tables(params, train_instances, result.warnings);

  GraphBuildStats stats;
  std::vector<SessionGraph> train_graphs =
      build_graphs(params, train_instances, &stats);
  std::vector<SessionGraph> val_graphs =
      build_graphs(params, val_instances, &stats);
  result.clamped_tn_diffs = stats.clamped_tn_diffs;

  AdamState adam = make_adam_state(rc.adam(), params);
  std::mt19937_64 shuffle_rng(rc.seed ^ 0x736875666c65ULL);
  std::size_t n = train_instances.size();
  std::size_t slots = std::min(resolve_threads(rc.threads), n);
  detail::BatchWorkspace workspace(slots, params);
  std::vector<Tensor> batch_grads;
  params.visit([&](const char*, const Tensor& t) {
    batch_grads.push_back(Tensor::zeros(t.shape));
  });

  ModelParams best = params;
  double best_r20 = -1.0;
  bool have_best = false;
  auto started = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < rc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t batch_start = 0, batch_id = 0; batch_start < n;
         batch_start += rc.batch_size, ++batch_id) {
      std::size_t batch_n = std::min(rc.batch_size, n - batch_start);
      for (Tensor& g : batch_grads) g.fill(0.0);
      double batch_loss = 0.0;
      for (std::size_t chunk = 0; chunk < batch_n; chunk += slots) {
        std::size_t chunk_n = std::min(slots, batch_n - chunk);
        try {
          parallel_for(chunk_n, rc.threads, [&](std::size_t ci) {
            std::size_t idx = order[batch_start + chunk + ci];
            Forward fwd = forward_on_graph(train_instances[idx],
                                           train_graphs[idx], params);
            workspace.losses[ci] = fwd.tape.value(fwd.loss)[0];
            fwd.tape.backward(fwd.loss);
            for (std::size_t t = 0; t < fwd.params.vars.size(); ++t) {
              workspace.grads[ci][t] = fwd.tape.grad(fwd.params.vars[t]);
            }
          });
        } catch (const NumericalError& e) {
          throw NumericalError("train: aborted at epoch " +
                               std::to_string(epoch) + " batch " +
                               std::to_string(batch_id) + ": " + e.what());
        }
        for (std::size_t ci = 0; ci < chunk_n; ++ci) {
          batch_loss += workspace.losses[ci];
          for (std::size_t t = 0; t < batch_grads.size(); ++t) {
            Tensor& acc = batch_grads[t];
            const Tensor& g = workspace.grads[ci][t];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
          }
        }
      }
      double mean_loss = batch_loss / static_cast<double>(batch_n);
      if (!std::isfinite(mean_loss)) {
        throw NumericalError("train: non-finite loss at epoch " +
                             std::to_string(epoch) + " batch " +
                             std::to_string(batch_id));
      }
      double inv = 1.0 / static_cast<double>(batch_n);
      for (Tensor& g : batch_grads) {
        for (double& x : g.data) x *= inv;
      }
      adam_step(params, batch_grads, adam, epoch);
      epoch_loss += batch_loss;
    }

    EvalReport val =
        evaluate_on_graphs(params, val_instances, val_graphs, rc.threads);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / static_cast<double>(n);
    row.val_r20 = val.recall20;
    row.val_m20 = val.mrr20;
    row.lr = scheduled_lr(adam.config, epoch);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    result.rows.push_back(row);
    if (!val_instances.empty() && val.recall20 > best_r20) {
      best_r20 = val.recall20;
      best = params;
      result.best_epoch = epoch;
      result.best_val = val;
      have_best = true;
    }
  }

  if (have_best) {
    result.params = std::move(best);
  } else {
    if (val_instances.empty() && rc.epochs > 0) {
      result.warnings.push_back(
          "validation slice is empty; keeping the final epoch");
      result.best_epoch = rc.epochs - 1;
    }
    result.params = std::move(params);
  }
  return result;
}

inline std::string metrics_csv(const std::vector<EpochRow>& rows) {
  std::string out = "epoch,train_loss,val_R@20,val_M@20,lr,wall_time\n";
  char line[160];
  for (const EpochRow& r : rows) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.2f,%.2f,%g,%.3f\n", r.epoch,
                  r.train_loss, 100.0 * r.val_r20, 100.0 * r.val_m20, r.lr,
                  r.wall_seconds);
    out += line;
  }
  return out;
}

}  // namespace tempgnn
