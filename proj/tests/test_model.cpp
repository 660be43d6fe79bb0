#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "tempgnn/checkpoint.hpp"
#include "tempgnn/model.hpp"
#include "tempgnn/synth.hpp"

using namespace tempgnn;

namespace {

LabeledInstance make_instance(std::vector<std::pair<std::size_t, std::int64_t>> events,
                              std::size_t target, std::int64_t prediction_ts) {
  LabeledInstance inst;
  for (auto& [item, ts] : events) inst.prefix.push_back({item, ts});
  inst.target_item = target;
  inst.prediction_timestamp = prediction_ts;
  return inst;
}

ModelConfig tiny_config(std::size_t items, std::size_t dim, std::size_t layers,
                        const std::string& tn, const std::string& te) {
  ModelConfig cfg;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.item_count = items;
  cfg.tn = EncoderSpec::parse(tn);
  cfg.te = EncoderSpec::parse(te);
  cfg.tn_buckets = 3;
  cfg.te_buckets = 2;
  return cfg;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Instances with fitted bucketizers from a small synthetic stream.
struct Fixture {
  ModelParams params;
  std::vector<LabeledInstance> instances;
};

Fixture make_fixture(ModelConfig cfg, std::uint64_t seed,
                     std::size_t n_sessions = 12) {
  auto corpus = synth_corpus({.n_items = 8, .n_sessions = n_sessions,
                              .seed = seed, .temporal_signal = true});
  Vocabulary vocab = Vocabulary::build(corpus);
  auto instances = expand(index_sessions(corpus, vocab), cfg.max_len);
  cfg.item_count = vocab.size();
  ModelParams params = init_params(cfg, seed + 1);
  std::vector<std::int64_t> tn_diffs, te_diffs;
  for (const auto& inst : instances) {
    for (const auto& e : inst.prefix) {
      tn_diffs.push_back(inst.prediction_timestamp - e.timestamp);
    }
    for (std::size_t j = 1; j < inst.prefix.size(); ++j) {
      te_diffs.push_back(inst.prefix[j].timestamp -
                         inst.prefix[j - 1].timestamp);
    }
  }
  if (te_diffs.empty()) te_diffs.push_back(0);
  params.tn_bucketizer = fit_quantile_buckets(tn_diffs, cfg.tn_buckets);
  params.te_bucketizer = fit_quantile_buckets(te_diffs, cfg.te_buckets);
  params.tn_range = DiffRange::fit(tn_diffs);
  params.te_range = DiffRange::fit(te_diffs);
  return {std::move(params), std::move(instances)};
}

SessionGraph permute_graph(const SessionGraph& g,
                           const std::vector<std::size_t>& perm) {
  SessionGraph out;
  out.nodes.resize(g.nodes.size());
  for (std::size_t k = 0; k < g.nodes.size(); ++k) {
    out.nodes[perm[k]] = g.nodes[k];
  }
  out.seq_tn_diff = g.seq_tn_diff;
  out.seq_to_node.resize(g.seq_to_node.size());
  for (std::size_t j = 0; j < g.seq_to_node.size(); ++j) {
    out.seq_to_node[j] = perm[g.seq_to_node[j]];
  }
  out.in_edges.resize(g.nodes.size());
  out.out_edges.resize(g.nodes.size());
  for (const GraphEdge& e : g.edges) {
    GraphEdge moved{perm[e.src], perm[e.dst], e.te_bucket, e.interval_ms};
    out.out_edges[moved.src].push_back(out.edges.size());
    out.in_edges[moved.dst].push_back(out.edges.size());
    out.edges.push_back(moved);
  }
  return out;
}

}  // namespace

TEST_CASE("hand-computed forward in two dimensions") {
  ModelConfig cfg = tiny_config(2, 2, 1, "none", "none");
  ModelParams p = make_params(cfg);  // everything zero
  p.item_table = Tensor::matrix(2, 2, {3.0, 0.0, 0.0, 5.0});
  p.pref_b = Tensor::row_vector({0.7, 0.3});

  Forward fwd = forward(make_instance({{0, 100}}, 1, 200), p);
  REQUIRE(bitwise_equal(fwd.tape.value(fwd.node_init[0]),
                        Tensor::row_vector({1.0, 0.0})));
  REQUIRE(bitwise_equal(fwd.tape.value(fwd.star[0]),
                        Tensor::row_vector({1.0, 0.0})));

  // zero weights: m=0, z=r=0.5, h=0, v_hat=(0.5,0)
  double alpha = sigmoid(0.5 / std::sqrt(2.0));
  double v1x = 0.5 + 0.5 * alpha;
  const Tensor& star1 = fwd.tape.value(fwd.star[1]);
  REQUIRE(star1[0] == Catch::Approx(v1x).epsilon(1e-14));
  REQUIRE(star1[1] == 0.0);

  double vfx = 0.75 + 0.25 * alpha;
  const Tensor& vf = fwd.tape.value(fwd.node_final[0]);
  REQUIRE(vf[0] == Catch::Approx(vfx).epsilon(1e-14));
  REQUIRE(vf[1] == 0.0);

  // zero attention weights: r=0, p = pref_b
  REQUIRE(bitwise_equal(fwd.tape.value(fwd.preference),
                        Tensor::row_vector({0.7, 0.3})));
  double norm = std::sqrt(0.58);
  const Tensor& scores = fwd.tape.value(fwd.scores);
  REQUIRE(scores[0] == Catch::Approx(0.7 / norm).epsilon(1e-14));
  REQUIRE(scores[1] == Catch::Approx(0.3 / norm).epsilon(1e-14));

  double gap = 12.0 * (0.7 / norm - 0.3 / norm);
  double expected_loss = std::log(1.0 + std::exp(gap));
  REQUIRE(fwd.tape.value(fwd.loss)[0] ==
          Catch::Approx(expected_loss).epsilon(1e-12));
}

TEST_CASE("a position repeated on one node contributes twice to the readout") {
  ModelConfig cfg = tiny_config(2, 2, 1, "none", "none");
  ModelParams p = make_params(cfg);
  p.item_table = Tensor::matrix(2, 2, {3.0, 0.0, 0.0, 5.0});
  p.readout_w0 = Tensor::row_vector({1.0, 0.0});
  p.pref_w = Tensor::matrix(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});  // p = r + b
  p.pref_b = Tensor::row_vector({0.1, 0.2});

  double alpha = sigmoid(0.5 / std::sqrt(2.0));
  double a = 0.75 + 0.25 * alpha;  // v_f x-coordinate, as in the case above

  // single position: gamma = 0.5, r = 0.5 v_f
  Forward one = forward(make_instance({{0, 100}}, 1, 200), p);
  const Tensor& p1 = one.tape.value(one.preference);
  REQUIRE(p1[0] == Catch::Approx(0.5 * a + 0.1).epsilon(1e-14));
  REQUIRE(p1[1] == Catch::Approx(0.2).epsilon(1e-14));

  // two positions collapsing to one node (self-loop): r = v_f, twice the mass
  Forward two = forward(make_instance({{0, 100}, {0, 150}}, 1, 200), p);
  REQUIRE(two.graph.nodes.size() == 1);
  REQUIRE(two.graph.edges.size() == 1);
  const Tensor& p2 = two.tape.value(two.preference);
  REQUIRE(p2[0] == Catch::Approx(a + 0.1).epsilon(1e-14));
  REQUIRE(p2[1] == Catch::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("star initializes to the node mean") {
  ModelConfig cfg = tiny_config(2, 2, 0, "none", "none");
  ModelParams p = make_params(cfg);
  p.item_table = Tensor::matrix(2, 2, {2.0, 0.0, 0.0, 3.0});
  p.pref_b = Tensor::row_vector({1.0, 0.0});
  Forward fwd = forward(make_instance({{0, 100}, {1, 150}}, 0, 200), p);
  REQUIRE(bitwise_equal(fwd.tape.value(fwd.star[0]),
                        Tensor::row_vector({0.5, 0.5})));
}

TEST_CASE("variant none gives unit-norm node vectors") {
  ModelConfig cfg = tiny_config(8, 6, 0, "none", "none");
  ModelParams p = init_params(cfg, 3);
  Forward fwd = forward(make_instance({{2, 0}, {5, 10}, {7, 30}}, 1, 50), p);
  for (Var v : fwd.node_init) {
    const Tensor& t = fwd.tape.value(v);
    double norm = 0.0;
    for (double x : t.data) norm += x * x;
    REQUIRE(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
  }
}

TEST_CASE("same item in different TN buckets gets different node vectors") {
  ModelConfig cfg = tiny_config(4, 6, 0, "q+a+g", "none");
  ModelParams p = init_params(cfg, 5);
  p.tn_bucketizer = Bucketizer<>{3, {100, 200}};
  // diffs from prediction: 250 (bucket 2) and 50 (bucket 0), same item
  Forward fwd = forward(make_instance({{1, 0}, {1, 200}}, 0, 250), p);
  REQUIRE(fwd.graph.nodes.size() == 2);
  const Tensor& a = fwd.tape.value(fwd.node_init[0]);
  const Tensor& b = fwd.tape.value(fwd.node_init[1]);
  REQUIRE_FALSE(bitwise_equal(a, b));
}

TEST_CASE("probabilities are invariant to graph node reordering") {
  ModelConfig cfg = tiny_config(8, 10, 2, "q+a+g", "q+g");
  Fixture fx = make_fixture(cfg, 11);
  std::mt19937_64 rng(99);
  std::size_t tested = 0;
  for (const auto& inst : fx.instances) {
    SessionGraph g = build_graph(inst, &fx.params.tn_bucketizer,
                                 &fx.params.te_bucketizer);
    if (g.nodes.size() < 3) continue;
    std::vector<std::size_t> perm(g.nodes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Forward base = forward_on_graph(inst, g, fx.params);
    Forward shuffled = forward_on_graph(inst, permute_graph(g, perm), fx.params);
    const Tensor& pa = base.tape.value(base.probs);
    const Tensor& pb = shuffled.tape.value(shuffled.probs);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(std::abs(pa[i] - pb[i]) < 1e-9);
    }
    if (++tested == 12) break;
  }
  REQUIRE(tested >= 5);
}

TEST_CASE("probabilities normalize, scores stay in range, loss positive") {
  ModelConfig cfg = tiny_config(8, 9, 2, "q+a+g", "q+a+g");
  Fixture fx = make_fixture(cfg, 21);
  std::size_t checked = 0;
  for (const auto& inst : fx.instances) {
    Forward fwd = forward(inst, fx.params);
    const Tensor& probs = fwd.tape.value(fwd.probs);
    const Tensor& scores = fwd.tape.value(fwd.scores);
    double sum = 0.0;
    for (double v : probs.data) sum += v;
    REQUIRE(std::abs(sum - 1.0) < 1e-9);
    for (double v : scores.data) {
      REQUIRE(v >= -1.0 - 1e-12);
      REQUIRE(v <= 1.0 + 1e-12);
    }
    double loss = fwd.tape.value(fwd.loss)[0];
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss > 0.0);
    if (++checked == 40) break;
  }
  REQUIRE(checked >= 20);
}

TEST_CASE("zero layers leave node vectors untouched") {
  ModelConfig cfg = tiny_config(8, 7, 0, "q+a", "none");
  Fixture fx = make_fixture(cfg, 31);
  Forward fwd = forward(fx.instances[2], fx.params);
  REQUIRE(fwd.node_init.size() == fwd.node_final.size());
  for (std::size_t k = 0; k < fwd.node_init.size(); ++k) {
    REQUIRE(bitwise_equal(fwd.tape.value(fwd.node_init[k]),
                          fwd.tape.value(fwd.node_final[k])));
  }
}

TEST_CASE("parameter count does not depend on the layer count") {
  ModelConfig two = tiny_config(12, 8, 2, "q+a+g", "q+g");
  ModelConfig six = two;
  six.layers = 6;
  REQUIRE(make_params(two).parameter_count() ==
          make_params(six).parameter_count());
  REQUIRE(make_params(two).tensor_count() == make_params(six).tensor_count());
}

TEST_CASE("scaling the item table leaves probabilities unchanged") {
  ModelConfig cfg = tiny_config(8, 9, 1, "q+g", "q");
  Fixture fx = make_fixture(cfg, 41);
  const auto& inst = fx.instances[1];
  Forward base = forward(inst, fx.params);
  ModelParams scaled = fx.params;
  for (double& v : scaled.item_table.data) v *= 3.7;
  Forward after = forward(inst, scaled);
  const Tensor& pa = base.tape.value(base.probs);
  const Tensor& pb = after.tape.value(after.probs);
  const Tensor& sa = base.tape.value(base.scores);
  const Tensor& sb = after.tape.value(after.scores);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(std::abs(pa[i] - pb[i]) < 1e-9);
    REQUIRE(std::abs(sa[i] - sb[i]) < 1e-9);
  }
}

TEST_CASE("forcing the update gate shut freezes the node") {
  ModelConfig cfg = tiny_config(6, 5, 3, "none", "none");
  ModelParams p = init_params(cfg, 7);
  for (double& v : p.ggnn_bz.data) v = -50.0;  // z ~ 0: no update
  Forward fwd = forward(make_instance({{3, 0}}, 1, 10), p);
  const Tensor& v0 = fwd.tape.value(fwd.node_init[0]);
  const Tensor& vf = fwd.tape.value(fwd.node_final[0]);
  for (std::size_t i = 0; i < v0.size(); ++i) {
    REQUIRE(std::abs(v0[i] - vf[i]) < 1e-10);
  }

  for (double& v : p.ggnn_bz.data) v = 50.0;  // z ~ 1: full update
  Forward open = forward(make_instance({{3, 0}}, 1, 10), p);
  const Tensor& vf2 = open.tape.value(open.node_final[0]);
  double diff = 0.0;
  for (std::size_t i = 0; i < v0.size(); ++i) {
    diff = std::max(diff, std::abs(v0[i] - vf2[i]));
  }
  REQUIRE(diff > 1e-3);
}

TEST_CASE("edge gate forced shut reproduces the no-TE model") {
  ModelConfig with_te = tiny_config(8, 6, 2, "none", "q+g");
  ModelConfig no_te = tiny_config(8, 6, 2, "none", "none");
  Fixture fx = make_fixture(with_te, 51);
  for (double& v : fx.params.gate_in_b.data) v = -50.0;
  for (double& v : fx.params.gate_out_b.data) v = -50.0;

  ModelParams twin = make_params(no_te);
  twin.config.item_count = fx.params.config.item_count;
  twin = make_params(twin.config);
  std::unordered_map<std::string, const Tensor*> source;
  fx.params.visit([&](const char* name, const Tensor& t) {
    source.emplace(name, &t);
  });
  twin.visit([&](const char* name, Tensor& t) { t = *source.at(name); });

  const auto& inst = fx.instances[3];
  REQUIRE(inst.prefix.size() >= 2);
  Forward gated = forward(inst, fx.params);
  Forward plain = forward(inst, twin);
  const Tensor& pa = gated.tape.value(gated.probs);
  const Tensor& pb = plain.tape.value(plain.probs);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(std::abs(pa[i] - pb[i]) < 1e-9);
  }

  // opened gate must actually change the distribution
  for (double& v : fx.params.gate_in_b.data) v = 50.0;
  for (double& v : fx.params.gate_out_b.data) v = 50.0;
  Forward open = forward(inst, fx.params);
  const Tensor& po = open.tape.value(open.probs);
  double diff = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    diff = std::max(diff, std::abs(po[i] - pb[i]));
  }
  REQUIRE(diff > 1e-9);
}

TEST_CASE("tied direction gates share one parameter pair") {
  ModelConfig cfg = tiny_config(8, 6, 1, "none", "q+g");
  cfg.tie_direction_gates = true;
  ModelParams p = init_params(cfg, 9);
  bool saw_out_gate = false;
  p.visit([&](const char* name, const Tensor&) {
    if (std::string(name) == "gate_out_w") saw_out_gate = true;
  });
  REQUIRE_FALSE(saw_out_gate);
  Fixture fx = make_fixture(cfg, 61);
  Forward fwd = forward(fx.instances[0], fx.params);
  REQUIRE(std::isfinite(fwd.tape.value(fwd.loss)[0]));
}

TEST_CASE("collinear item rows give the uniform cross-entropy") {
  ModelConfig cfg = tiny_config(4, 2, 1, "none", "none");
  ModelParams p = make_params(cfg);
  p.item_table = Tensor::matrix(4, 2, {1, 0, 2, 0, 3, 0, 4, 0});
  p.pref_b = Tensor::row_vector({0.4, 0.9});
  Forward fwd = forward(make_instance({{0, 0}, {2, 10}}, 3, 20), p);
  REQUIRE(fwd.tape.value(fwd.loss)[0] ==
          Catch::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("an aligned preference drives the loss to zero") {
  Tape tape;
  Var p = tape.leaf(Tensor::row_vector({2.0, 0.0}));
  Var items = tape.leaf(Tensor::matrix(2, 2, {5.0, 0.0, -1.0, 0.0}));
  Var probs = tape.softmax_scaled(tape.cosine_scores(p, items), 12.0);
  Var loss = tape.pick_neg_log(probs, 0);
  REQUIRE(tape.value(loss)[0] < 1e-9);
  REQUIRE(tape.value(loss)[0] >= 0.0);
}

TEST_CASE("end-to-end gradients match finite differences on a small model") {
  ModelConfig cfg = tiny_config(8, 4, 1, "q+a+g", "q+g");
  Fixture fx = make_fixture(cfg, 71);
  std::vector<LabeledInstance> batch;
  for (const auto& inst : fx.instances) {
    if (inst.prefix.size() >= 3) batch.push_back(inst);
    if (batch.size() == 2) break;
  }
  REQUIRE(batch.size() == 2);
  ModelGradCheckReport report = grad_check_model(batch, fx.params);
  INFO("worst tensor " << report.worst_tensor << "[" << report.worst_coord
                       << "] analytic " << report.analytic << " numeric "
                       << report.numeric);
  REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("constant and position variants run and differentiate") {
  for (const char* tn : {"constant", "position", "bucket"}) {
    ModelConfig cfg = tiny_config(8, 4, 1, tn, "constant");
    Fixture fx = make_fixture(cfg, 81);
    std::vector<LabeledInstance> batch = {fx.instances[0]};
    ModelGradCheckReport report = grad_check_model(batch, fx.params);
    INFO("tn variant " << tn << " worst tensor " << report.worst_tensor);
    REQUIRE(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("init is deterministic per seed and fills every tensor") {
  ModelConfig cfg = tiny_config(10, 8, 2, "q+a+g", "q+a+g");
  ModelParams a = init_params(cfg, 42);
  ModelParams b = init_params(cfg, 42);
  ModelParams c = init_params(cfg, 43);
  bool all_equal = true, any_diff_c = false;
  double bound = 1.0 / std::sqrt(8.0);
  a.visit([&](const char* name, const Tensor& t) {
    const Tensor* tb = nullptr;
    const Tensor* tc = nullptr;
    b.visit([&](const char* n2, const Tensor& t2) {
      if (std::string(n2) == name) tb = &t2;
    });
    c.visit([&](const char* n2, const Tensor& t2) {
      if (std::string(n2) == name) tc = &t2;
    });
    all_equal = all_equal && bitwise_equal(t, *tb);
    any_diff_c = any_diff_c || !bitwise_equal(t, *tc);
    for (double v : t.data) {
      REQUIRE(std::abs(v) <= bound);
      REQUIRE(v != 0.0);  // probability-zero event under uniform init
    }
  });
  REQUIRE(all_equal);
  REQUIRE(any_diff_c);
}

TEST_CASE("forward replays bitwise") {
  ModelConfig cfg = tiny_config(8, 6, 2, "q+a+g", "q+g");
  Fixture fx = make_fixture(cfg, 91);
  Forward a = forward(fx.instances[0], fx.params);
  Forward b = forward(fx.instances[0], fx.params);
  REQUIRE(bitwise_equal(a.tape.value(a.loss), b.tape.value(b.loss)));
  REQUIRE(bitwise_equal(a.tape.value(a.probs), b.tape.value(b.probs)));
  a.tape.backward(a.loss);
  b.tape.backward(b.loss);
  for (std::size_t i = 0; i < a.params.vars.size(); ++i) {
    REQUIRE(bitwise_equal(a.tape.grad(a.params.vars[i]),
                          b.tape.grad(b.params.vars[i])));
  }
}

TEST_CASE("forward validates instance and configuration") {
  ModelConfig cfg = tiny_config(4, 4, 1, "none", "none");
  ModelParams p = init_params(cfg, 1);
  REQUIRE_THROWS_AS(forward(make_instance({{0, 0}}, 9, 10), p),
                    ValidationError);
  REQUIRE_THROWS_AS(forward(make_instance({{7, 0}}, 1, 10), p),
                    ValidationError);
  LabeledInstance long_prefix;
  for (int j = 0; j < 11; ++j) long_prefix.prefix.push_back({0, j * 10});
  long_prefix.target_item = 1;
  long_prefix.prediction_timestamp = 200;
  REQUIRE_THROWS_AS(forward(long_prefix, p), ValidationError);

  ModelConfig bad = cfg;
  bad.te = EncoderSpec::parse("position");
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
  ModelConfig bad2 = cfg;
  bad2.tau = 0.0;
  REQUIRE_THROWS_AS(bad2.validate(), ValidationError);
}

TEST_CASE("checkpoints round-trip bitwise") {
  auto dir = std::filesystem::temp_directory_path() / "tempgnn_model_test";
  std::filesystem::create_directories(dir);
  for (auto [tn, te] : {std::pair<const char*, const char*>{"q+a+g", "q+g"},
                        {"none", "none"},
                        {"constant", "bucket"},
                        {"position", "q"}}) {
    ModelConfig cfg = tiny_config(9, 5, 2, tn, te);
    Fixture fx = make_fixture(cfg, 101);
    auto path = (dir / (std::string("ckpt_") + tn + "_" + te + ".bin")).string();
    save_checkpoint(path, fx.params);
    ModelParams loaded = load_checkpoint(path);

    REQUIRE(loaded.config.dim == fx.params.config.dim);
    REQUIRE(loaded.config.layers == fx.params.config.layers);
    REQUIRE(loaded.config.tau == fx.params.config.tau);
    REQUIRE(loaded.config.item_count == fx.params.config.item_count);
    REQUIRE(loaded.config.tn.to_string() == fx.params.config.tn.to_string());
    REQUIRE(loaded.config.te.to_string() == fx.params.config.te.to_string());
    REQUIRE(loaded.tn_bucketizer.boundaries == fx.params.tn_bucketizer.boundaries);
    REQUIRE(loaded.te_bucketizer.boundaries == fx.params.te_bucketizer.boundaries);
    REQUIRE(loaded.tn_range.lo == fx.params.tn_range.lo);
    REQUIRE(loaded.tn_range.hi == fx.params.tn_range.hi);

    bool tensors_equal = true;
    std::vector<const Tensor*> original;
    fx.params.visit([&](const char*, const Tensor& t) {
      original.push_back(&t);
    });
    std::size_t i = 0;
    loaded.visit([&](const char*, const Tensor& t) {
      tensors_equal = tensors_equal && bitwise_equal(t, *original[i++]);
    });
    REQUIRE(tensors_equal);

    // reloaded parameters reproduce the forward pass bit for bit
    for (std::size_t k = 0; k < 3 && k < fx.instances.size(); ++k) {
      Forward a = forward(fx.instances[k], fx.params);
      Forward b = forward(fx.instances[k], loaded);
      REQUIRE(bitwise_equal(a.tape.value(a.probs), b.tape.value(b.probs)));
      REQUIRE(bitwise_equal(a.tape.value(a.loss), b.tape.value(b.loss)));
    }
  }
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  auto dir = std::filesystem::temp_directory_path() / "tempgnn_model_test";
  std::filesystem::create_directories(dir);
  ModelConfig cfg = tiny_config(6, 4, 1, "q", "none");
  ModelParams p = init_params(cfg, 2);
  auto good = (dir / "good.bin").string();
  save_checkpoint(good, p);

  auto bad_magic = (dir / "bad_magic.bin").string();
  {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes[0] = 'X';
    std::ofstream(bad_magic, std::ios::binary) << bytes;
  }
  REQUIRE_THROWS_AS(load_checkpoint(bad_magic), ValidationError);

  auto truncated = (dir / "truncated.bin").string();
  {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() / 2);
    std::ofstream(truncated, std::ios::binary) << bytes;
  }
  REQUIRE_THROWS_AS(load_checkpoint(truncated), ValidationError);

  auto trailing = (dir / "trailing.bin").string();
  {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes += "junk";
    std::ofstream(trailing, std::ios::binary) << bytes;
  }
  REQUIRE_THROWS_AS(load_checkpoint(trailing), ValidationError);
  REQUIRE_THROWS_AS(load_checkpoint((dir / "missing.bin").string()),
                    ValidationError);
}
