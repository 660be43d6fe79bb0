#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tempgnn/checkpoint.hpp"
#include "tempgnn/config.hpp"
#include "tempgnn/data.hpp"
#include "tempgnn/eval.hpp"
#include "tempgnn/harness.hpp"
#include "tempgnn/synth.hpp"
#include "tempgnn/trainer.hpp"

namespace {

using namespace tempgnn;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

// RunConfig plumbing shared by train/ablate/sweep-buckets: defaults, then the
// config file, then --set pairs, then named flags, most specific last.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, CLI::Option*>> flags;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "flat key = value configuration file");
    cmd->add_option("--set", sets, "extra key=value override; repeatable");
    auto flag = [&](const std::string& name, const std::string& key,
                    const std::string& help) {
      flags.emplace_back(key, cmd->add_option(name, values[key], help));
    };
    flag("--train", "train", "training corpus path");
    flag("--test", "test", "test corpus path");
    flag("--vocab", "vocab", "vocabulary path");
    flag("--out,--checkpoint", "checkpoint", "checkpoint output path");
    flag("--metrics", "metrics", "metrics CSV output path");
    flag("--dim", "dim", "embedding width");
    flag("--layers", "layers", "message-passing layers");
    flag("--tau", "tau", "softmax scale");
    flag("--tn", "tn", "node time encoder (none|position|constant|bucket|q|q+a|q+g|q+a+g)");
    flag("--te", "te", "edge time encoder (none|constant|bucket|q|q+a|q+g|q+a+g)");
    flag("--tn-buckets", "tn_buckets", "node time bucket count");
    flag("--te-buckets", "te_buckets", "edge time bucket count");
    flag("--tie-direction-gates", "tie_direction_gates",
         "share the edge gate across directions (true|false)");
    flag("--leaky-slope", "leaky_slope", "leaky ReLU negative slope");
    flag("--max-len", "max_len", "prefix truncation length");
    flag("--batch-size", "batch_size", "instances per optimizer step");
    flag("--epochs", "epochs", "training epochs");
    flag("--lr", "lr", "base learning rate");
    flag("--lr-decay", "lr_decay", "learning-rate decay factor");
    flag("--lr-decay-period", "lr_decay_period", "epochs per decay step");
    flag("--weight-decay", "weight_decay", "L2 regularization rate");
    flag("--beta1", "beta1", "Adam first-moment decay");
    flag("--beta2", "beta2", "Adam second-moment decay");
    flag("--adam-eps", "adam_eps", "Adam denominator epsilon");
    flag("--val-fraction", "val_fraction",
         "fraction of most recent sessions held out per epoch");
    flag("--seed", "seed", "RNG seed");
    flag("--threads", "threads", "worker threads (0 = hardware)");
  }

  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) rc = load_config(config_path);
    for (const std::string& pair : sets) {
      apply_config_line(rc, pair, "--set");
    }
    for (const auto& [key, opt] : flags) {
      if (opt->count() > 0) rc.set(key, values.at(key));
    }
    return rc;
  }
};

struct LoadedData {
  std::vector<IndexedSession> sessions;
  std::size_t item_count = 0;
};

LoadedData load_corpus(const std::string& corpus_path,
                       const std::string& vocab_path) {
  if (corpus_path.empty()) throw ValidationError("missing corpus path");
  if (vocab_path.empty()) throw ValidationError("missing vocabulary path");
  LoadedData data;
  data.sessions = read_corpus(corpus_path);
  data.item_count = read_vocabulary(vocab_path).size();
  for (const IndexedSession& s : data.sessions) {
    for (const IndexedEvent& e : s.events) {
      if (e.item >= data.item_count) {
        throw ValidationError("corpus " + corpus_path + ": session " +
                              s.session_id + " references item " +
                              std::to_string(e.item) +
                              " outside the vocabulary");
      }
    }
  }
  return data;
}

void print_report(const EvalReport& report) {
  std::printf("R@5   %.2f\n", 100.0 * report.recall5);
  std::printf("M@5   %.2f\n", 100.0 * report.mrr5);
  std::printf("R@20  %.2f\n", 100.0 * report.recall20);
  std::printf("M@20  %.2f\n", 100.0 * report.mrr20);
  std::printf("count %zu\n", report.count);
}

int cmd_synth(const SynthSpec& spec, const std::string& out_path) {
  auto corpus = synth_corpus(spec);
  write_synth_log(out_path, corpus);
  std::size_t events = 0;
  for (const Session& s : corpus) events += s.events.size();
  std::printf("wrote %zu sessions (%zu events) to %s\n", corpus.size(), events,
              out_path.c_str());
  return kExitOk;
}

struct PreprocessArgs {
  std::string input;
  std::string out_dir;
  std::size_t min_item_count = 5;
  std::string test_window = "1d";
  std::size_t max_len = 10;
  double keep_fraction = 1.0;
  std::string delimiter = ",";
  bool header = false;
  ColumnSpec columns;
};

int cmd_preprocess(const PreprocessArgs& args) {
  if (args.delimiter.size() != 1) {
    throw ValidationError("preprocess: delimiter must be one character");
  }
  ColumnSpec spec = args.columns;
  spec.delimiter = args.delimiter[0];
  spec.header = args.header;

  std::vector<Session> sessions = parse_log(args.input, spec);
  if (args.keep_fraction < 1.0) {
    sessions = keep_last_fraction(std::move(sessions), args.keep_fraction);
  }
  auto [filtered, full_vocab] =
      preprocess(std::move(sessions), args.min_item_count);
  (void)full_vocab;
  TimeSplit split =
      split_by_time(std::move(filtered), parse_duration_ms(args.test_window));
  Vocabulary vocab = Vocabulary::build(split.train);

  std::filesystem::create_directories(args.out_dir);
  auto path = [&](const char* name) {
    return (std::filesystem::path(args.out_dir) / name).string();
  };
  write_corpus(path("train.txt"), index_sessions(split.train, vocab));
  write_corpus(path("test.txt"), index_sessions(split.test, vocab));
  write_vocabulary(path("vocab.txt"), vocab);

  RunConfig rc;
  rc.train_path = path("train.txt");
  rc.test_path = path("test.txt");
  rc.vocab_path = path("vocab.txt");
  rc.max_len = args.max_len;
  write_text(path("run.conf"), dump_config(rc));

  std::printf("train sessions %zu, test sessions %zu, items %zu\n",
              split.train.size(), split.test.size(), vocab.size());
  std::printf("wrote train.txt, test.txt, vocab.txt, run.conf to %s\n",
              args.out_dir.c_str());
  return kExitOk;
}

int cmd_train(const ConfigArgs& cfg_args) {
  RunConfig rc = cfg_args.resolve();
  LoadedData data = load_corpus(rc.train_path, rc.vocab_path);
  TrainResult result = train(rc, std::move(data.sessions), data.item_count);
  for (const std::string& w : result.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::string csv = metrics_csv(result.rows);
  if (!rc.metrics_path.empty()) {
    write_text(rc.metrics_path, csv);
  } else {
    std::fputs(csv.c_str(), stdout);
  }
  if (!rc.checkpoint_path.empty()) {
    save_checkpoint(rc.checkpoint_path, result.params);
    std::printf("checkpoint written to %s\n", rc.checkpoint_path.c_str());
  } else {
    std::fprintf(stderr, "warning: no checkpoint path; model discarded\n");
  }
  if (!result.rows.empty()) {
    std::printf("best epoch %zu, validation R@20 %.2f, M@20 %.2f\n",
                result.best_epoch, 100.0 * result.best_val.recall20,
                100.0 * result.best_val.mrr20);
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data_path;
  std::string vocab_path;
  std::string metrics_out;
  std::string ranks_out;
  std::string dump_graphs;
  std::size_t threads = 1;
};

int cmd_evaluate(const EvaluateArgs& args) {
  ModelParams params = load_checkpoint(args.checkpoint);
  std::vector<IndexedSession> sessions = read_corpus(args.data_path);
  if (!args.vocab_path.empty()) {
    std::size_t vocab_size = read_vocabulary(args.vocab_path).size();
    if (vocab_size != params.config.item_count) {
      throw ValidationError(
          "evaluate: vocabulary has " + std::to_string(vocab_size) +
          " items but the checkpoint was trained with " +
          std::to_string(params.config.item_count));
    }
  }
  std::vector<LabeledInstance> instances =
      expand(sessions, params.config.max_len);
  if (!args.dump_graphs.empty()) {
    const ModelConfig& cfg = params.config;
    const Bucketizer<>* tn = cfg.tn.uses_bucket_table() ? &params.tn_bucketizer
                                                        : nullptr;
    const Bucketizer<>* te = cfg.te.uses_bucket_table() ? &params.te_bucketizer
                                                        : nullptr;
    std::string dump;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      dump += "# instance " + std::to_string(i) + "\n";
      dump += dump_graph(build_graph(instances[i], tn, te));
    }
    write_text(args.dump_graphs, dump);
  }
  EvalReport report = evaluate(params, instances, args.threads);
  print_report(report);
  if (!args.metrics_out.empty()) {
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "R@5,M@5,R@20,M@20,count\n%.2f,%.2f,%.2f,%.2f,%zu\n",
                  100.0 * report.recall5, 100.0 * report.mrr5,
                  100.0 * report.recall20, 100.0 * report.mrr20, report.count);
    write_text(args.metrics_out, buffer);
  }
  if (!args.ranks_out.empty()) {
    std::string lines;
    for (std::size_t rank : report.ranks) {
      lines += std::to_string(rank) + "\n";
    }
    write_text(args.ranks_out, lines);
  }
  return kExitOk;
}

struct AblateArgs {
  std::string variants = "Base,Position,Constant,Bucket,Q,Q+A,Q+G,Q+A+G";
  std::string tn = "on";
  std::string te = "on";
  std::size_t replicates = 1;
  std::string out;
};

bool parse_switch(const std::string& which, const std::string& value) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw ValidationError(which + " must be on or off");
}

int cmd_ablate(const ConfigArgs& cfg_args, const AblateArgs& args) {
  RunConfig rc = cfg_args.resolve();
  LoadedData data = load_corpus(rc.train_path, rc.vocab_path);
  if (rc.test_path.empty()) throw ValidationError("ablate: missing --test");
  std::vector<IndexedSession> test_sessions = read_corpus(rc.test_path);
  std::vector<std::string> variants;
  std::stringstream ss(args.variants);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) variants.push_back(token);
  }
  auto rows = ablate(rc, data.sessions, test_sessions, data.item_count,
                     variants, parse_switch("--tn", args.tn),
                     parse_switch("--te", args.te), args.replicates);
  std::string tsv = ablation_tsv(rows);
  std::fputs(tsv.c_str(), stdout);
  if (!args.out.empty()) write_text(args.out, tsv);
  return kExitOk;
}

struct SweepArgs {
  std::vector<std::size_t> counts;
  std::string embedding = "both";
  std::string out;
};

int cmd_sweep(const ConfigArgs& cfg_args, const SweepArgs& args) {
  RunConfig rc = cfg_args.resolve();
  LoadedData data = load_corpus(rc.train_path, rc.vocab_path);
  if (rc.test_path.empty()) {
    throw ValidationError("sweep-buckets: missing --test");
  }
  std::vector<IndexedSession> test_sessions = read_corpus(rc.test_path);
  auto rows = sweep_buckets(rc, data.sessions, test_sessions, data.item_count,
                            args.counts, parse_sweep_target(args.embedding));
  std::string csv = sweep_csv(rows);
  std::fputs(csv.c_str(), stdout);
  if (!args.out.empty()) write_text(args.out, csv);
  return kExitOk;
}

struct GradcheckArgs {
  std::size_t dim = 8;
  std::size_t items = 20;
  std::size_t layers = 2;
  std::size_t buckets = 4;
  std::size_t sessions = 24;
  std::size_t seeds = 5;
  std::size_t batch = 2;
  double step = 4e-3;
  double max_rel = 1e-4;
  std::string tn = "q+a+g";
  std::string te = "q+a+g";
};

int cmd_gradcheck(const GradcheckArgs& args) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= args.seeds; ++seed) {
    auto corpus = synth_corpus({.n_items = args.items,
                                .n_sessions = args.sessions,
                                .seed = seed,
                                .temporal_signal = true,
                                .min_events = 4,
                                .max_events = 5});
    Vocabulary vocab = Vocabulary::build(corpus);
    ModelConfig cfg;
    cfg.dim = args.dim;
    cfg.layers = args.layers;
    cfg.item_count = vocab.size();
    cfg.tn = EncoderSpec::parse(args.tn);
    cfg.te = EncoderSpec::parse(args.te);
    cfg.tn_buckets = args.buckets;
    cfg.te_buckets = args.buckets;
    ModelParams params = init_params(cfg, seed * 7 + 1);
    std::vector<LabeledInstance> instances = expand(index_sessions(corpus, vocab), cfg.max_len);
    std::vector<std::string> warnings;
    fit_temporal_tables(params, instances, warnings);
    std::vector<LabeledInstance> batch;
    for (const LabeledInstance& inst : instances) {
      if (inst.prefix.size() >= 3) batch.push_back(inst);
      if (batch.size() == args.batch) break;
    }
    if (batch.empty()) {
      throw ValidationError("gradcheck: no instances with prefix length >= 3");
    }
    ModelGradCheckReport report = grad_check_model(batch, params, args.step);
    worst = std::max(worst, report.max_rel_err);
    std::printf("seed %llu  max_rel_err %.3e  worst %s[%zu] analytic %.6e numeric %.6e\n",
                static_cast<unsigned long long>(seed), report.max_rel_err,
                report.worst_tensor.c_str(), report.worst_coord,
                report.analytic, report.numeric);
  }
  std::printf("worst over %zu seeds: %.3e (limit %.1e)\n", args.seeds, worst,
              args.max_rel);
  if (worst > args.max_rel) {
    std::fprintf(stderr, "gradcheck FAILED\n");
    return kExitNumerical;
  }
  std::printf("gradcheck passed\n");
  return kExitOk;
}

struct DumpArgs {
  std::string checkpoint;
  std::string out;
  std::string table = "both";
};

int cmd_dump_embeddings(const DumpArgs& args) {
  ModelParams params = load_checkpoint(args.checkpoint);
  bool want_tn = args.table == "both" || args.table == "tn";
  bool want_te = args.table == "both" || args.table == "te";
  if (!want_tn && !want_te) {
    throw ValidationError("dump-embeddings: table must be tn|te|both");
  }
  std::string csv = "table,bucket";
  for (std::size_t c = 0; c < params.config.dim; ++c) {
    csv += ",v" + std::to_string(c);
  }
  csv += "\n";
  std::size_t rows = 0;
  auto append = [&](const char* label, const Tensor& table) {
    char cell[40];
    for (std::size_t b = 0; b < table.rows(); ++b) {
      csv += label;
      csv += "," + std::to_string(b);
      for (std::size_t c = 0; c < table.cols(); ++c) {
        std::snprintf(cell, sizeof(cell), ",%.17g", table.at(b, c));
        csv += cell;
      }
      csv += "\n";
      ++rows;
    }
  };
  if (want_tn && params.config.tn.uses_bucket_table()) {
    append("tn", params.tn_table);
  }
  if (want_te && params.config.te.uses_bucket_table()) {
    append("te", params.te_table);
  }
  if (rows == 0) {
    throw ValidationError(
        "dump-embeddings: the checkpoint has no bucket tables for '" +
        args.table + "'");
  }
  write_text(args.out, csv);
  std::printf("wrote %zu bucket vectors to %s\n", rows, args.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal session-graph recommender"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic click log");
  SynthSpec synth_spec;
  std::string synth_out;
  std::string synth_signal = "false";
  synth->add_option("--items", synth_spec.n_items, "catalog size");
  synth->add_option("--sessions", synth_spec.n_sessions, "session count");
  synth->add_option("--seed", synth_spec.seed, "RNG seed");
  synth->add_option("--temporal-signal", synth_signal,
                    "make the next item depend on the time gap (true|false)");
  synth->add_option("--min-events", synth_spec.min_events, "shortest session");
  synth->add_option("--max-events", synth_spec.max_events, "longest session");
  synth->add_option("--out", synth_out, "output CSV path")->required();

  auto* pre = app.add_subcommand("preprocess",
                                 "filter, split and index a raw click log");
  PreprocessArgs pre_args;
  pre->add_option("--input", pre_args.input, "raw log path")->required();
  pre->add_option("--out", pre_args.out_dir, "output directory")->required();
  pre->add_option("--min-item-count", pre_args.min_item_count,
                  "drop items with fewer appearances");
  pre->add_option("--test-window", pre_args.test_window,
                  "trailing test window, e.g. 1d or 7d");
  pre->add_option("--max-len", pre_args.max_len,
                  "prefix length recorded in run.conf");
  pre->add_option("--keep-last-fraction", pre_args.keep_fraction,
                  "keep only the most recent fraction of sessions");
  pre->add_option("--delimiter", pre_args.delimiter, "field separator");
  pre->add_flag("--header", pre_args.header, "first line names the columns");
  pre->add_option("--session-col", pre_args.columns.session_column,
                  "session id column (name or index)");
  pre->add_option("--time-col", pre_args.columns.time_column,
                  "timestamp column (name or index)");
  pre->add_option("--item-col", pre_args.columns.item_column,
                  "item id column (name or index)");

  auto* train_cmd = app.add_subcommand("train", "fit a model and checkpoint it");
  ConfigArgs train_cfg;
  train_cfg.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate",
                                      "rank held-out clicks with a checkpoint");
  EvaluateArgs eval_args;
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--data", eval_args.data_path, "corpus to score")
      ->required();
  eval_cmd->add_option("--vocab", eval_args.vocab_path,
                       "vocabulary path (size cross-check)");
  eval_cmd->add_option("--metrics-out", eval_args.metrics_out,
                       "write metrics as a one-row CSV");
  eval_cmd->add_option("--ranks-out", eval_args.ranks_out,
                       "write one target rank per line");
  eval_cmd->add_option("--dump-graphs", eval_args.dump_graphs,
                       "write adjacency listings of every instance graph");
  eval_cmd->add_option("--threads", eval_args.threads, "worker threads");

  auto* ablate_cmd =
      app.add_subcommand("ablate", "compare temporal encoder variants");
  ConfigArgs ablate_cfg;
  ablate_cfg.attach(ablate_cmd);
  AblateArgs ablate_args;
  ablate_cmd->add_option("--variants", ablate_args.variants,
                         "comma-separated variant rows");
  ablate_cmd->add_option("--tn-enabled", ablate_args.tn,
                         "apply the variant to node time (on|off)");
  ablate_cmd->add_option("--te-enabled", ablate_args.te,
                         "apply the variant to edge time (on|off)");
  ablate_cmd->add_option("--replicates", ablate_args.replicates,
                         "seeds per variant, metrics averaged");
  ablate_cmd->add_option("--table-out", ablate_args.out, "write the TSV here");

  auto* sweep_cmd =
      app.add_subcommand("sweep-buckets", "retrain across bucket counts");
  ConfigArgs sweep_cfg;
  sweep_cfg.attach(sweep_cmd);
  SweepArgs sweep_args;
  sweep_cmd->add_option("--counts", sweep_args.counts,
                        "bucket counts; 0 disables the embedding")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--embedding", sweep_args.embedding,
                        "which table to sweep (tn|te|both)");
  sweep_cmd->add_option("--csv-out", sweep_args.out, "write the CSV here");

  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "compare tape gradients against finite differences");
  GradcheckArgs grad_args;
  grad_cmd->add_option("--dim", grad_args.dim);
  grad_cmd->add_option("--items", grad_args.items);
  grad_cmd->add_option("--layers", grad_args.layers);
  grad_cmd->add_option("--buckets", grad_args.buckets);
  grad_cmd->add_option("--sessions", grad_args.sessions);
  grad_cmd->add_option("--seeds", grad_args.seeds);
  grad_cmd->add_option("--batch", grad_args.batch);
  grad_cmd->add_option("--step", grad_args.step);
  grad_cmd->add_option("--max-rel", grad_args.max_rel);
  grad_cmd->add_option("--tn", grad_args.tn);
  grad_cmd->add_option("--te", grad_args.te);

  auto* dump_cmd = app.add_subcommand(
      "dump-embeddings", "export learned time-bucket vectors as CSV");
  DumpArgs dump_args;
  dump_cmd->add_option("--checkpoint", dump_args.checkpoint)->required();
  dump_cmd->add_option("--out", dump_args.out)->required();
  dump_cmd->add_option("--table", dump_args.table, "tn|te|both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (synth->parsed()) {
      synth_spec.temporal_signal =
          tempgnn::detail::parse_bool("--temporal-signal", synth_signal);
      return cmd_synth(synth_spec, synth_out);
    }
    if (pre->parsed()) return cmd_preprocess(pre_args);
    if (train_cmd->parsed()) return cmd_train(train_cfg);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_cfg, ablate_args);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_cfg, sweep_args);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_args);
    if (dump_cmd->parsed()) return cmd_dump_embeddings(dump_args);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitOk;
}
