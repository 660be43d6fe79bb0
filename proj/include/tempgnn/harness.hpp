#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "tempgnn/config.hpp"
#include "tempgnn/eval.hpp"
#include "tempgnn/trainer.hpp"

namespace tempgnn {

// Row order of the temporal-embedding comparison table.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {
      "Base", "Position", "Constant", "Bucket", "Q", "Q+A", "Q+G", "Q+A+G"};
  return names;
}

inline std::string canonical_variant(const std::string& name) {
  std::string lower;
  for (char c : name) {
    lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  for (const std::string& known : ablation_variants()) {
    std::string known_lower;
    for (char c : known) {
      known_lower +=
          static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (lower == known_lower) return known;
  }
  throw ValidationError("ablate: unknown variant '" + name + "'");
}

// A variant names the temporal encoding applied to both embeddings, with
// per-embedding kill switches. Position cannot ride on edges, so its row
// runs with TE disabled.
inline RunConfig variant_config(RunConfig base, const std::string& variant,
                                bool tn_on, bool te_on) {
  std::string lower;
  for (char c : canonical_variant(variant)) {
    lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::string normalized = EncoderSpec::parse(lower).to_string();
  base.tn = tn_on ? normalized : "none";
  base.te = (te_on && normalized != "position") ? normalized : "none";
  return base;
}

struct AblationRow {
  std::string variant;
  double r5 = 0.0;
  double m5 = 0.0;
  double r20 = 0.0;
  double m20 = 0.0;
};

// Trains every variant on the same data with the same seed set and reports
// test metrics averaged over replicates.
inline std::vector<AblationRow> ablate(
    const RunConfig& base, const std::vector<IndexedSession>& train_sessions,
    const std::vector<IndexedSession>& test_sessions, std::size_t item_count,
    const std::vector<std::string>& variants, bool tn_on, bool te_on,
    std::size_t replicates) {
  if (variants.empty()) throw ValidationError("ablate: no variants");
  if (replicates < 1) throw ValidationError("ablate: replicates must be >= 1");
  std::vector<AblationRow> rows;
  for (const std::string& name : variants) {
    RunConfig rc = variant_config(base, name, tn_on, te_on);
    AblationRow row;
    row.variant = canonical_variant(name);
    for (std::size_t r = 0; r < replicates; ++r) {
      rc.seed = base.seed + r;
      TrainResult trained = train(rc, train_sessions, item_count);
      std::vector<LabeledInstance> test_instances =
          expand(test_sessions, rc.max_len);
      EvalReport report =
          evaluate(trained.params, test_instances, rc.threads);
      row.r5 += report.recall5;
      row.m5 += report.mrr5;
      row.r20 += report.recall20;
      row.m20 += report.mrr20;
    }
    double inv = 1.0 / static_cast<double>(replicates);
    row.r5 *= inv;
    row.m5 *= inv;
    row.r20 *= inv;
    row.m20 *= inv;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_tsv(const std::vector<AblationRow>& rows) {
  std::string out = "variant\tR@20\tM@20\tR@5\tM@5\n";
  char line[160];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof(line), "%s\t%.2f\t%.2f\t%.2f\t%.2f\n",
                  r.variant.c_str(), 100.0 * r.r20, 100.0 * r.m20,
                  100.0 * r.r5, 100.0 * r.m5);
    out += line;
  }
  return out;
}

enum class SweepTarget { kTn, kTe, kBoth };

inline SweepTarget parse_sweep_target(const std::string& text) {
  if (text == "tn") return SweepTarget::kTn;
  if (text == "te") return SweepTarget::kTe;
  if (text == "both") return SweepTarget::kBoth;
  throw ValidationError("sweep-buckets: embedding must be tn|te|both");
}

struct SweepRow {
  std::size_t buckets = 0;
  double r20 = 0.0;
  double m20 = 0.0;
};

// One training run per bucket count under a shared seed; zero buckets turn
// the swept embedding off entirely.
inline std::vector<SweepRow> sweep_buckets(
    const RunConfig& base, const std::vector<IndexedSession>& train_sessions,
    const std::vector<IndexedSession>& test_sessions, std::size_t item_count,
    const std::vector<std::size_t>& counts, SweepTarget target) {
  if (counts.empty()) throw ValidationError("sweep-buckets: no counts");
  bool sweep_tn = target != SweepTarget::kTe;
  bool sweep_te = target != SweepTarget::kTn;
  auto check_bucketed = [](const std::string& which, const std::string& spec) {
    if (!EncoderSpec::parse(spec).uses_bucket_table()) {
      throw ValidationError("sweep-buckets: " + which + " variant '" + spec +
                            "' has no bucket table to sweep");
    }
  };
  if (sweep_tn) check_bucketed("tn", base.tn);
  if (sweep_te) check_bucketed("te", base.te);

  std::vector<SweepRow> rows;
  for (std::size_t count : counts) {
    RunConfig rc = base;
    if (count == 0) {
      if (sweep_tn) rc.tn = "none";
      if (sweep_te) rc.te = "none";
    } else {
      if (sweep_tn) rc.tn_buckets = count;
      if (sweep_te) rc.te_buckets = count;
    }
    TrainResult trained = train(rc, train_sessions, item_count);
    std::vector<LabeledInstance> test_instances =
        expand(test_sessions, rc.max_len);
    EvalReport report = evaluate(trained.params, test_instances, rc.threads);
    rows.push_back({count, report.recall20, report.mrr20});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "buckets,R@20,M@20\n";
  char line[96];
  for (const SweepRow& r : rows) {
    std::snprintf(line, sizeof(line), "%zu,%.2f,%.2f\n", r.buckets,
                  100.0 * r.r20, 100.0 * r.m20);
    out += line;
  }
  return out;
}

}  // namespace tempgnn
