#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "tempgnn/config.hpp"
#include "tempgnn/harness.hpp"
#include "tempgnn/synth.hpp"
#include "tempgnn/trainer.hpp"

using namespace tempgnn;

namespace {

struct Corpus {
  std::vector<IndexedSession> sessions;
  std::size_t item_count = 0;
};

Corpus tiny_corpus(std::size_t n_sessions, bool signal, std::uint64_t seed) {
  auto raw = synth_corpus({.n_items = 8, .n_sessions = n_sessions,
                           .seed = seed, .temporal_signal = signal});
  Vocabulary vocab = Vocabulary::build(raw);
  return {index_sessions(raw, vocab), vocab.size()};
}

RunConfig tiny_run() {
  RunConfig rc;
  rc.dim = 8;
  rc.layers = 1;
  rc.tn_buckets = 4;
  rc.te_buckets = 4;
  rc.batch_size = 16;
  rc.epochs = 2;
  rc.val_fraction = 0.2;
  rc.seed = 7;
  return rc;
}

std::size_t brute_force_rank(const std::vector<double>& scores,
                             std::size_t target) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  for (std::size_t pos = 0; pos < idx.size(); ++pos) {
    if (idx[pos] == target) return pos + 1;
  }
  return 0;
}

}  // namespace

TEST_CASE("first adam step matches the hand-computed update") {
  Tensor theta = Tensor::scalar(0.0);
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  AdamState state = make_adam_state(cfg, {&theta});
  adam_step({&theta}, {Tensor::scalar(1.0)}, {"theta"}, state, 0);
  REQUIRE(state.m[0][0] == (1.0 - 0.9) * 1.0);
  REQUIRE(state.v[0][0] == (1.0 - 0.999) * 1.0);
  REQUIRE(theta[0] == Catch::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  REQUIRE(state.step == 1);
}

TEST_CASE("zero gradients with no weight decay are a fixed point") {
  Tensor a = Tensor::matrix(2, 2, {1.0, -2.0, 3.0, 0.5});
  Tensor b = Tensor::row_vector({0.25, -0.75});
  Tensor a0 = a, b0 = b;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  AdamState state = make_adam_state(cfg, {&a, &b});
  for (int i = 0; i < 3; ++i) {
    adam_step({&a, &b}, {Tensor::zeros({2, 2}), Tensor::zeros({2})},
              {"a", "b"}, state, 0);
  }
  REQUIRE(bitwise_equal(a, a0));
  REQUIRE(bitwise_equal(b, b0));
}

TEST_CASE("learning rate decays by 0.1 every 3 epochs") {
  AdamConfig cfg;
  double expected[] = {1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4,
                       1e-5, 1e-5, 1e-5, 1e-6};
  for (std::size_t epoch = 0; epoch < 10; ++epoch) {
    REQUIRE(scheduled_lr(cfg, epoch) ==
            Catch::Approx(expected[epoch]).epsilon(1e-12));
  }
}

TEST_CASE("one adam step descends a quadratic bowl") {
  for (double lr : {1e-4, 1e-3, 1e-2}) {
    Tensor theta = Tensor::scalar(1.0);
    AdamConfig cfg;
    cfg.lr = lr;
    cfg.weight_decay = 0.0;
    AdamState state = make_adam_state(cfg, {&theta});
    adam_step({&theta}, {Tensor::scalar(2.0 * theta[0])}, {"theta"}, state, 0);
    REQUIRE(theta[0] * theta[0] < 1.0);
  }
}

TEST_CASE("adam rejects bad inputs") {
  Tensor theta = Tensor::scalar(1.0);
  AdamState state = make_adam_state(AdamConfig{}, {&theta});
  REQUIRE_THROWS_AS(
      adam_step({&theta}, {Tensor::row_vector({1.0, 2.0})}, {"w"}, state, 0),
      ValidationError);
  Tensor bad = Tensor::scalar(std::numeric_limits<double>::infinity());
  try {
    adam_step({&theta}, {bad}, {"pref_b"}, state, 0);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    REQUIRE(std::string(e.what()).find("pref_b") != std::string::npos);
  }
  AdamConfig bad_cfg;
  bad_cfg.lr = -1.0;
  REQUIRE_THROWS_AS(bad_cfg.validate(), ValidationError);
  bad_cfg = AdamConfig{};
  bad_cfg.beta1 = 1.0;
  REQUIRE_THROWS_AS(bad_cfg.validate(), ValidationError);
}

TEST_CASE("run config defaults follow the reference settings") {
  RunConfig rc;
  REQUIRE(rc.dim == 256);
  REQUIRE(rc.layers == 6);
  REQUIRE(rc.tau == 12.0);
  REQUIRE(rc.tn == "q+a+g");
  REQUIRE(rc.te == "q+a+g");
  REQUIRE(rc.tn_buckets == 40);
  REQUIRE(rc.te_buckets == 50);
  REQUIRE(rc.max_len == 10);
  REQUIRE(rc.batch_size == 100);
  REQUIRE(rc.lr == 1e-3);
  REQUIRE(rc.weight_decay == 1e-5);
  REQUIRE(rc.lr_decay == 0.1);
  REQUIRE(rc.lr_decay_period == 3);
  REQUIRE(rc.beta1 == 0.9);
  REQUIRE(rc.beta2 == 0.999);
  rc.validate();
}

TEST_CASE("config files parse with comments and fail on unknown keys") {
  auto dir = std::filesystem::temp_directory_path() / "tempgnn_train_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "run.conf").string();
  {
    std::ofstream out(path);
    out << "# model size\n"
        << "dim = 16\n"
        << "\n"
        << "layers=2   # inline comment\n"
        << "tn = q+g\n"
        << "seed = 99\n"
        << "lr = 5e-4\n";
  }
  RunConfig rc = load_config(path);
  REQUIRE(rc.dim == 16);
  REQUIRE(rc.layers == 2);
  REQUIRE(rc.tn == "q+g");
  REQUIRE(rc.seed == 99);
  REQUIRE(rc.lr == 5e-4);
  REQUIRE(rc.te == "q+a+g");  // untouched default

  {
    std::ofstream out(path);
    out << "dimension = 16\n";
  }
  REQUIRE_THROWS_AS(load_config(path), ValidationError);
  {
    std::ofstream out(path);
    out << "dim sixteen\n";
  }
  REQUIRE_THROWS_AS(load_config(path), ValidationError);
  {
    std::ofstream out(path);
    out << "dim = sixteen\n";
  }
  REQUIRE_THROWS_AS(load_config(path), ValidationError);
  REQUIRE_THROWS_AS(load_config((dir / "missing.conf").string()),
                    ValidationError);
}

TEST_CASE("config validation catches bad settings") {
  RunConfig rc;
  rc.tau = 0.0;
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  rc = RunConfig{};
  rc.te = "position";
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  rc = RunConfig{};
  rc.val_fraction = 1.0;
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  rc = RunConfig{};
  rc.tn = "quantile";
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  rc = RunConfig{};
  rc.batch_size = 0;
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
}

TEST_CASE("config dump round-trips through the parser") {
  RunConfig rc;
  rc.dim = 24;
  rc.tn = "bucket";
  rc.lr = 2.5e-4;
  rc.tie_direction_gates = true;
  rc.train_path = "data/train.txt";
  auto dir = std::filesystem::temp_directory_path() / "tempgnn_train_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "dump.conf").string();
  std::ofstream(path) << dump_config(rc);
  RunConfig back = load_config(path);
  REQUIRE(back.dim == 24);
  REQUIRE(back.tn == "bucket");
  REQUIRE(back.lr == 2.5e-4);
  REQUIRE(back.tie_direction_gates);
  REQUIRE(back.train_path == "data/train.txt");
  REQUIRE(dump_config(back) == dump_config(rc));
}

TEST_CASE("validation carve takes the most recent sessions") {
  std::vector<IndexedSession> sessions;
  for (std::size_t i = 0; i < 10; ++i) {
    IndexedSession s;
    s.session_id = "s" + std::to_string(i);
    s.events = {{0, static_cast<std::int64_t>(1000 * (10 - i))},
                {1, static_cast<std::int64_t>(1000 * (10 - i) + 500)}};
    sessions.push_back(s);
  }
  // last events decrease with i, so sessions 0 and 1 are the most recent;
  // both sides keep their input order
  auto [train_part, val_part] = carve_validation(sessions, 0.2);
  REQUIRE(train_part.size() == 8);
  REQUIRE(val_part.size() == 2);
  REQUIRE(val_part[0].session_id == "s0");
  REQUIRE(val_part[1].session_id == "s1");
  REQUIRE(train_part[0].session_id == "s2");

  auto [all, none] = carve_validation(sessions, 0.0);
  REQUIRE(all.size() == 10);
  REQUIRE(none.empty());
}

TEST_CASE("target rank agrees with a brute-force sort") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> size(2, 60);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t n = size(rng);
    std::vector<double> scores(n);
    for (double& s : scores) {
      s = value(rng);
      if (trial % 2 == 0) s = std::round(s * 5.0) / 5.0;  // force ties
    }
    Tensor t = Tensor::row_vector(scores);
    for (std::size_t target = 0; target < n; ++target) {
      REQUIRE(rank_of_target(t, target) == brute_force_rank(scores, target));
    }
  }
}

TEST_CASE("rank contributions follow the metric definitions") {
  EvalReport r = report_from_ranks({1});
  REQUIRE(r.recall5 == 1.0);
  REQUIRE(r.mrr5 == 1.0);
  REQUIRE(r.recall20 == 1.0);
  REQUIRE(r.mrr20 == 1.0);
  r = report_from_ranks({6});
  REQUIRE(r.recall5 == 0.0);
  REQUIRE(r.mrr5 == 0.0);
  REQUIRE(r.recall20 == 1.0);
  REQUIRE(r.mrr20 == Catch::Approx(1.0 / 6.0));
  r = report_from_ranks({21});
  REQUIRE(r.recall20 == 0.0);
  REQUIRE(r.mrr20 == 0.0);
  r = report_from_ranks({1, 6, 21, 3});
  REQUIRE(r.recall20 >= r.recall5);
  REQUIRE(r.mrr20 >= r.mrr5);
  REQUIRE(r.count == 4);
  REQUIRE(report_from_ranks({}).count == 0);
}

TEST_CASE("evaluate matches a manual forward-and-sort loop") {
  Corpus corpus = tiny_corpus(14, true, 3);
  RunConfig rc = tiny_run();
  ModelParams params = init_params(rc.model(corpus.item_count), 11);
  std::vector<LabeledInstance> instances = expand(corpus.sessions, rc.max_len);
  std::vector<std::string> warnings;
  fit_temporal_tables(params, instances, warnings);

  EvalReport report = evaluate(params, instances);
  REQUIRE(report.count == instances.size());
  std::vector<std::size_t> expected;
  for (const LabeledInstance& inst : instances) {
    Forward fwd = forward(inst, params);
    const Tensor& probs = fwd.tape.value(fwd.probs);
    expected.push_back(brute_force_rank(probs.data, inst.target_item));
  }
  REQUIRE(report.ranks == expected);
  EvalReport oracle = report_from_ranks(expected);
  REQUIRE(report.recall5 == oracle.recall5);
  REQUIRE(report.mrr20 == oracle.mrr20);

  EvalReport threaded = evaluate(params, instances, 4);
  REQUIRE(threaded.ranks == report.ranks);
  REQUIRE(threaded.recall20 == report.recall20);
}

TEST_CASE("training is bitwise deterministic across runs and thread counts") {
  Corpus corpus = tiny_corpus(20, true, 9);
  RunConfig rc = tiny_run();
  TrainResult a = train(rc, corpus.sessions, corpus.item_count);
  TrainResult b = train(rc, corpus.sessions, corpus.item_count);
  rc.threads = 3;
  TrainResult c = train(rc, corpus.sessions, corpus.item_count);
  REQUIRE(a.rows.size() == rc.epochs);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    REQUIRE(a.rows[i].train_loss == b.rows[i].train_loss);
    REQUIRE(a.rows[i].train_loss == c.rows[i].train_loss);
    REQUIRE(a.rows[i].val_r20 == c.rows[i].val_r20);
  }
  bool equal = true;
  std::vector<const Tensor*> av;
  a.params.visit([&](const char*, const Tensor& t) { av.push_back(&t); });
  std::size_t i = 0;
  c.params.visit([&](const char*, const Tensor& t) {
    equal = equal && bitwise_equal(t, *av[i++]);
  });
  REQUIRE(equal);

  rc.threads = 1;
  rc.seed = 8;
  TrainResult d = train(rc, corpus.sessions, corpus.item_count);
  REQUIRE(d.rows[0].train_loss != a.rows[0].train_loss);
}

TEST_CASE("zero epochs return the initialization") {
  Corpus corpus = tiny_corpus(10, false, 13);
  RunConfig rc = tiny_run();
  rc.epochs = 0;
  TrainResult result = train(rc, corpus.sessions, corpus.item_count);
  REQUIRE(result.rows.empty());
  ModelParams fresh = init_params(rc.model(corpus.item_count), rc.seed);
  std::vector<const Tensor*> expected;
  fresh.visit([&](const char*, const Tensor& t) { expected.push_back(&t); });
  bool equal = true;
  std::size_t i = 0;
  result.params.visit([&](const char*, const Tensor& t) {
    equal = equal && bitwise_equal(t, *expected[i++]);
  });
  REQUIRE(equal);
}

TEST_CASE("the loss falls over a few epochs on a small corpus") {
  Corpus corpus = tiny_corpus(20, false, 17);
  RunConfig rc = tiny_run();
  rc.epochs = 5;
  rc.lr_decay_period = 100;
  rc.val_fraction = 0.0;
  TrainResult result = train(rc, corpus.sessions, corpus.item_count);
  REQUIRE(result.rows[4].train_loss < result.rows[0].train_loss);
}

TEST_CASE("best-validation epoch is the first maximum of recall") {
  Corpus corpus = tiny_corpus(25, true, 21);
  RunConfig rc = tiny_run();
  rc.epochs = 3;
  TrainResult result = train(rc, corpus.sessions, corpus.item_count);
  std::size_t expected = 0;
  double best = -1.0;
  for (const EpochRow& row : result.rows) {
    if (row.val_r20 > best) {
      best = row.val_r20;
      expected = row.epoch;
    }
  }
  REQUIRE(result.best_epoch == expected);
  REQUIRE(result.best_val.recall20 == best);
  REQUIRE(result.best_val.recall20 >= result.best_val.recall5);
}

TEST_CASE("an empty validation slice warns and keeps the last epoch") {
  Corpus corpus = tiny_corpus(10, false, 23);
  RunConfig rc = tiny_run();
  rc.val_fraction = 0.0;
  TrainResult result = train(rc, corpus.sessions, corpus.item_count);
  bool warned = false;
  for (const std::string& w : result.warnings) {
    if (w.find("validation") != std::string::npos) warned = true;
  }
  REQUIRE(warned);
  REQUIRE(result.best_epoch == rc.epochs - 1);
  for (const EpochRow& row : result.rows) {
    REQUIRE(row.val_r20 == 0.0);
  }
}

TEST_CASE("a diverging run aborts with the failing batch") {
  Corpus corpus = tiny_corpus(12, false, 27);
  RunConfig rc = tiny_run();
  rc.lr = 1e308;
  rc.epochs = 3;
  rc.val_fraction = 0.0;
  try {
    train(rc, corpus.sessions, corpus.item_count);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    REQUIRE(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("metrics csv carries one header and one row per epoch") {
  std::vector<EpochRow> rows = {{0, 2.5, 0.25, 0.125, 1e-3, 1.5},
                                {1, 2.0, 0.5, 0.25, 1e-3, 3.0}};
  std::string csv = metrics_csv(rows);
  REQUIRE(csv.find("epoch,train_loss,val_R@20,val_M@20,lr,wall_time\n") == 0);
  REQUIRE(csv.find("0,2.500000,25.00,12.50,0.001,1.500\n") != std::string::npos);
  REQUIRE(csv.find("1,2.000000,50.00,25.00,0.001,3.000\n") != std::string::npos);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("variant grid maps names onto encoder settings") {
  RunConfig base;
  RunConfig rc = variant_config(base, "Base", true, true);
  REQUIRE(rc.tn == "none");
  REQUIRE(rc.te == "none");
  rc = variant_config(base, "Position", true, true);
  REQUIRE(rc.tn == "position");
  REQUIRE(rc.te == "none");  // edges cannot carry positions
  rc = variant_config(base, "q+a+g", true, true);
  REQUIRE(rc.tn == "q+a+g");
  REQUIRE(rc.te == "q+a+g");
  rc = variant_config(base, "Q", false, true);
  REQUIRE(rc.tn == "none");
  REQUIRE(rc.te == "q");
  rc = variant_config(base, "Q", true, false);
  REQUIRE(rc.tn == "q");
  REQUIRE(rc.te == "none");
  REQUIRE(canonical_variant("q+a+g") == "Q+A+G");
  REQUIRE(canonical_variant("BUCKET") == "Bucket");
  REQUIRE_THROWS_AS(canonical_variant("fourier"), ValidationError);
  REQUIRE(ablation_variants().size() == 8);
  REQUIRE(ablation_variants().front() == "Base");
  REQUIRE(ablation_variants().back() == "Q+A+G");
}

TEST_CASE("a one-variant grid equals a plain train plus evaluate") {
  Corpus corpus = tiny_corpus(16, true, 31);
  Corpus test = tiny_corpus(6, true, 32);
  RunConfig rc = tiny_run();
  rc.epochs = 1;
  auto rows = ablate(rc, corpus.sessions, test.sessions, corpus.item_count,
                     {"Q"}, true, true, 1);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].variant == "Q");

  RunConfig manual = variant_config(rc, "Q", true, true);
  manual.seed = rc.seed;
  TrainResult trained = train(manual, corpus.sessions, corpus.item_count);
  EvalReport report = evaluate(
      trained.params, expand(test.sessions, manual.max_len), manual.threads);
  REQUIRE(rows[0].r20 == report.recall20);
  REQUIRE(rows[0].m20 == report.mrr20);
  REQUIRE(rows[0].r5 == report.recall5);
  REQUIRE(rows[0].m5 == report.mrr5);
}

TEST_CASE("ablation table mirrors the requested rows") {
  Corpus corpus = tiny_corpus(16, true, 35);
  Corpus test = tiny_corpus(6, true, 36);
  RunConfig rc = tiny_run();
  rc.epochs = 1;
  auto rows = ablate(rc, corpus.sessions, test.sessions, corpus.item_count,
                     {"Base", "Q+A+G"}, true, true, 2);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].variant == "Base");
  REQUIRE(rows[1].variant == "Q+A+G");
  for (const AblationRow& row : rows) {
    REQUIRE(row.r20 >= row.r5);
    REQUIRE(row.r20 >= 0.0);
    REQUIRE(row.r20 <= 1.0);
  }
  std::string tsv = ablation_tsv(rows);
  REQUIRE(tsv.find("variant\tR@20\tM@20\tR@5\tM@5\n") == 0);
  REQUIRE(std::count(tsv.begin(), tsv.end(), '\n') == 3);
  REQUIRE(tsv.find("Base\t") != std::string::npos);
  REQUIRE(tsv.find("Q+A+G\t") != std::string::npos);
  REQUIRE_THROWS_AS(ablate(rc, corpus.sessions, test.sessions,
                           corpus.item_count, {}, true, true, 1),
                    ValidationError);
  REQUIRE_THROWS_AS(ablate(rc, corpus.sessions, test.sessions,
                           corpus.item_count, {"Q"}, true, true, 0),
                    ValidationError);
}

TEST_CASE("bucket sweep runs one row per count and zero means off") {
  Corpus corpus = tiny_corpus(16, true, 41);
  Corpus test = tiny_corpus(6, true, 42);
  RunConfig rc = tiny_run();
  rc.epochs = 1;
  auto rows = sweep_buckets(rc, corpus.sessions, test.sessions,
                            corpus.item_count, {0, 2, 4}, SweepTarget::kBoth);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].buckets == 0);
  REQUIRE(rows[2].buckets == 4);

  auto base_rows = ablate(rc, corpus.sessions, test.sessions,
                          corpus.item_count, {"Base"}, true, true, 1);
  REQUIRE(rows[0].r20 == base_rows[0].r20);
  REQUIRE(rows[0].m20 == base_rows[0].m20);

  std::string csv = sweep_csv(rows);
  REQUIRE(csv.find("buckets,R@20,M@20\n") == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);

  REQUIRE_THROWS_AS(sweep_buckets(rc, corpus.sessions, test.sessions,
                                  corpus.item_count, {}, SweepTarget::kBoth),
                    ValidationError);
  RunConfig constant = rc;
  constant.tn = "constant";
  REQUIRE_THROWS_AS(sweep_buckets(constant, corpus.sessions, test.sessions,
                                  corpus.item_count, {2}, SweepTarget::kTn),
                    ValidationError);
  REQUIRE(parse_sweep_target("tn") == SweepTarget::kTn);
  REQUIRE_THROWS_AS(parse_sweep_target("edges"), ValidationError);
}

TEST_CASE("train rejects degenerate inputs") {
  RunConfig rc = tiny_run();
  REQUIRE_THROWS_AS(train(rc, {}, 5), ValidationError);
  Corpus corpus = tiny_corpus(10, false, 51);
  REQUIRE_THROWS_AS(train(rc, corpus.sessions, 0), ValidationError);
}
