#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tempgnn/error.hpp"
#include "tempgnn/tensor.hpp"

namespace tempgnn {

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

enum class OpKind {
  kLeaf,
  kMatmul,
  kMatvec,
  kAdd,
  kSub,
  kMul,
  kAddN,
  kScale,
  kSigmoid,
  kTanh,
  kLeakyRelu,
  kExp,
  kLog,
  kL2Normalize,
  kSoftmaxScaled,
  kConcat,
  kLookupRow,
  kDot,
  kScalarMul,
  kStack,
  kWeightedSum,
  kGateBlend,
  kGateBlendScalar,
  kCosineScores,
  kPickNegLog,
  kSum,
};

class Tape;

// Handle into a Tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  std::size_t id = 0;
};

// Append-only record of a forward computation. Nodes are kept in
// topological order (inputs always precede their consumers), and the
// backward pass visits them exactly once in reverse insertion order.
// One tape per example; tapes are never shared across threads.
class Tape {
 public:
  Var leaf(Tensor value) {
    return push(OpKind::kLeaf, {}, std::move(value), nullptr);
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  std::size_t size() const { return nodes_.size(); }

  // ---- binary elementwise ----

  Var add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_same_shape(x, y, "add");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return push(OpKind::kAdd, {a.id, b.id}, std::move(out),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a.id, g);
                  t.accumulate(b.id, g);
                });
  }

  Var sub(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_same_shape(x, y, "sub");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return push(OpKind::kSub, {a.id, b.id}, std::move(out),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a.id, g);
                  t.accumulate_scaled(b.id, g, -1.0);
                });
  }

  Var mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_same_shape(x, y, "mul");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return push(OpKind::kMul, {a.id, b.id}, std::move(out),
                [a, b](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.value(a);
                  const Tensor& yv = t.value(b);
                  Tensor& ga = t.grad_buffer(a.id);
                  Tensor& gb = t.grad_buffer(b.id);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * yv[i];
                    gb[i] += g[i] * xv[i];
                  }
                });
  }

  // Sum of n same-shaped tensors.
  Var add_n(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("add_n: empty operand list");
    Tensor out = value(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Tensor& x = value(xs[k]);
      require_same_shape(out, x, "add_n");
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    }
    std::vector<std::size_t> ids(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) ids[k] = xs[k].id;
    return push(OpKind::kAddN, ids, std::move(out),
                [ids](Tape& t, const Tensor& g) {
                  for (std::size_t id : ids) t.accumulate(id, g);
                });
  }

  Var scale(Var x, double c) {
    Tensor out = value(x);
    for (double& v : out.data) v *= c;
    return push(OpKind::kScale, {x.id}, std::move(out),
                [x, c](Tape& t, const Tensor& g) {
                  t.accumulate_scaled(x.id, g, c);
                });
  }

  // ---- unary elementwise ----

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = detail::stable_sigmoid(v);
    std::size_t out_id = nodes_.size();
    return push(OpKind::kSigmoid, {x.id}, std::move(out),
                [x, out_id](Tape& t, const Tensor& g) {
                  const Tensor& y = t.nodes_[out_id].value;
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * y[i] * (1.0 - y[i]);
                  }
                });
  }

  Var tanh(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = std::tanh(v);
    std::size_t out_id = nodes_.size();
    return push(OpKind::kTanh, {x.id}, std::move(out),
                [x, out_id](Tape& t, const Tensor& g) {
                  const Tensor& y = t.nodes_[out_id].value;
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * (1.0 - y[i] * y[i]);
                  }
                });
  }

  Var leaky_relu(Var x, double slope = 0.01) {
    if (!(slope > 0.0 && slope < 1.0)) {
      throw ValidationError("leaky_relu: slope must be in (0,1), got " +
                            std::to_string(slope));
    }
    Tensor out = value(x);
    for (double& v : out.data) v = v >= 0.0 ? v : slope * v;
    return push(OpKind::kLeakyRelu, {x.id}, std::move(out),
                [x, slope](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.value(x);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : slope);
                  }
                });
  }

  Var exp(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = std::exp(v);
    std::size_t out_id = nodes_.size();
    return push(OpKind::kExp, {x.id}, std::move(out),
                [x, out_id](Tape& t, const Tensor& g) {
                  const Tensor& y = t.nodes_[out_id].value;
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
                });
  }

  Var log(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) {
      if (!(v > 0.0)) {
        throw NumericalError("log: non-positive input " + std::to_string(v));
      }
      v = std::log(v);
    }
    return push(OpKind::kLog, {x.id}, std::move(out),
                [x](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.value(x);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
                });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
      throw ValidationError("matmul: incompatible shapes " + x.shape_string() +
                            " and " + y.shape_string());
    }
    std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double xv = x.data[i * k + p];
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          out.data[i * n + j] += xv * y.data[p * n + j];
        }
      }
    }
    return push(OpKind::kMatmul, {a.id, b.id}, std::move(out),
                [a, b, m, k, n](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.value(a);
                  const Tensor& yv = t.value(b);
                  Tensor& ga = t.grad_buffer(a.id);
                  Tensor& gb = t.grad_buffer(b.id);
                  // dA = G * B^T, dB = A^T * G
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        acc += g.data[i * n + j] * yv.data[p * n + j];
                      }
                      ga.data[i * k + p] += acc;
                    }
                  }
                  for (std::size_t p = 0; p < k; ++p) {
                    for (std::size_t j = 0; j < n; ++j) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < m; ++i) {
                        acc += xv.data[i * k + p] * g.data[i * n + j];
                      }
                      gb.data[p * n + j] += acc;
                    }
                  }
                });
  }

  // w: [m x k], x: [k] -> [m]
  Var matvec(Var w, Var x) {
    const Tensor& wv = value(w);
    const Tensor& xv = value(x);
    if (wv.rank() != 2 || xv.rank() != 1 || wv.shape[1] != xv.shape[0]) {
      throw ValidationError("matvec: incompatible shapes " + wv.shape_string() +
                            " and " + xv.shape_string());
    }
    std::size_t m = wv.shape[0], k = wv.shape[1];
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = wv.data.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) acc += row[p] * xv[p];
      out[i] = acc;
    }
    return push(OpKind::kMatvec, {w.id, x.id}, std::move(out),
                [w, x, m, k](Tape& t, const Tensor& g) {
                  const Tensor& wv = t.value(w);
                  const Tensor& xv = t.value(x);
                  Tensor& gw = t.grad_buffer(w.id);
                  Tensor& gx = t.grad_buffer(x.id);
                  for (std::size_t i = 0; i < m; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    double* gw_row = gw.data.data() + i * k;
                    const double* w_row = wv.data.data() + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                      gw_row[p] += gi * xv[p];
                      gx[p] += gi * w_row[p];
                    }
                  }
                });
  }

  Var dot(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.rank() != 1 || !x.same_shape(y)) {
      throw ValidationError("dot: incompatible shapes " + x.shape_string() +
                            " and " + y.shape_string());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    return push(OpKind::kDot, {a.id, b.id}, Tensor::scalar(acc),
                [a, b](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.value(a);
                  const Tensor& yv = t.value(b);
                  t.accumulate_scaled(a.id, yv, g[0]);
                  t.accumulate_scaled(b.id, xv, g[0]);
                });
  }

  // s: [1] scalar, x: any shape -> s * x
  Var scalar_mul(Var s, Var x) {
    const Tensor& sv = value(s);
    if (sv.size() != 1) {
      throw ValidationError("scalar_mul: gate must be a scalar, got " +
                            sv.shape_string());
    }
    Tensor out = value(x);
    for (double& v : out.data) v *= sv[0];
    return push(OpKind::kScalarMul, {s.id, x.id}, std::move(out),
                [s, x](Tape& t, const Tensor& g) {
                  const Tensor& sv = t.value(s);
                  const Tensor& xv = t.value(x);
                  Tensor& gs = t.grad_buffer(s.id);
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                  gs[0] += acc;
                  t.accumulate_scaled(x.id, g, sv[0]);
                });
  }

  // ---- structural ----

  Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("concat: empty operand list");
    std::size_t total = 0;
    for (Var v : xs) {
      const Tensor& x = value(v);
      if (x.rank() != 1) {
        throw ValidationError("concat: expects vectors, got " + x.shape_string());
      }
      total += x.size();
    }
    Tensor out = Tensor::zeros({total});
    std::size_t off = 0;
    for (Var v : xs) {
      const Tensor& x = value(v);
      std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
      off += x.size();
    }
    std::vector<std::size_t> ids(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) ids[k] = xs[k].id;
    return push(OpKind::kConcat, ids, std::move(out),
                [ids](Tape& t, const Tensor& g) {
                  std::size_t off = 0;
                  for (std::size_t id : ids) {
                    Tensor& gx = t.grad_buffer(id);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[off + i];
                    off += gx.size();
                  }
                });
  }

  // Row gather from an embedding table; backward scatters into that row.
  Var lookup_row(Var table, std::size_t row) {
    const Tensor& m = value(table);
    if (m.rank() != 2 || row >= m.shape[0]) {
      throw ValidationError("lookup_row: row " + std::to_string(row) +
                            " out of range for " + m.shape_string());
    }
    std::size_t cols = m.shape[1];
    Tensor out = Tensor::zeros({cols});
    std::copy(m.data.begin() + row * cols, m.data.begin() + (row + 1) * cols,
              out.data.begin());
    return push(OpKind::kLookupRow, {table.id}, std::move(out),
                [table, row, cols](Tape& t, const Tensor& g) {
                  Tensor& gm = t.grad_buffer(table.id);
                  for (std::size_t i = 0; i < cols; ++i) {
                    gm.data[row * cols + i] += g[i];
                  }
                });
  }

  // Scalars [1] each -> vector [n].
  Var stack(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw ValidationError("stack: empty operand list");
    Tensor out = Tensor::zeros({scalars.size()});
    std::vector<std::size_t> ids(scalars.size());
    for (std::size_t k = 0; k < scalars.size(); ++k) {
      const Tensor& s = value(scalars[k]);
      if (s.size() != 1) {
        throw ValidationError("stack: expects scalars, got " + s.shape_string());
      }
      out[k] = s[0];
      ids[k] = scalars[k].id;
    }
    return push(OpKind::kStack, ids, std::move(out),
                [ids](Tape& t, const Tensor& g) {
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    t.grad_buffer(ids[k])[0] += g[k];
                  }
                });
  }

  // sum_k w[k] * v_k over same-shaped vectors.
  Var weighted_sum(Var weights, const std::vector<Var>& vecs) {
    const Tensor& w = value(weights);
    if (w.rank() != 1 || w.size() != vecs.size()) {
      throw ValidationError("weighted_sum: " + std::to_string(vecs.size()) +
                            " vectors but weights " + w.shape_string());
    }
    if (vecs.empty()) throw ValidationError("weighted_sum: empty vector list");
    Tensor out = Tensor::zeros(value(vecs[0]).shape);
    std::vector<std::size_t> ids(vecs.size());
    for (std::size_t k = 0; k < vecs.size(); ++k) {
      const Tensor& v = value(vecs[k]);
      require_same_shape(out, v, "weighted_sum");
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * v[i];
      ids[k] = vecs[k].id;
    }
    std::size_t w_id = weights.id;
    return push(OpKind::kWeightedSum, ids, std::move(out),
                [w_id, ids](Tape& t, const Tensor& g) {
                  const Tensor& wv = t.nodes_[w_id].value;
                  Tensor& gw = t.grad_buffer(w_id);
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    const Tensor& v = t.nodes_[ids[k]].value;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
                    gw[k] += acc;
                    t.accumulate_scaled(ids[k], g, wv[k]);
                  }
                });
  }

  // (1-g) (.) a + g (.) b, computed as a + g (.) (b - a) so that blending
  // identical inputs is exact and each coordinate stays inside [min, max]
  // of its inputs even in floating point.
  Var gate_blend(Var gate, Var a, Var b) {
    const Tensor& gv = value(gate);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_same_shape(gv, av, "gate_blend");
    require_same_shape(av, bv, "gate_blend");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = av[i] + gv[i] * (bv[i] - av[i]);
    }
    return push(OpKind::kGateBlend, {gate.id, a.id, b.id}, std::move(out),
                [gate, a, b](Tape& t, const Tensor& g) {
                  const Tensor& gv = t.value(gate);
                  const Tensor& av = t.value(a);
                  const Tensor& bv = t.value(b);
                  Tensor& gg = t.grad_buffer(gate.id);
                  Tensor& ga = t.grad_buffer(a.id);
                  Tensor& gb = t.grad_buffer(b.id);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gg[i] += g[i] * (bv[i] - av[i]);
                    ga[i] += g[i] * (1.0 - gv[i]);
                    gb[i] += g[i] * gv[i];
                  }
                });
  }

  // Same blend with one scalar gate for the whole vector.
  Var gate_blend_scalar(Var gate, Var a, Var b) {
    const Tensor& gv = value(gate);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (gv.size() != 1) {
      throw ValidationError("gate_blend_scalar: gate must be a scalar, got " +
                            gv.shape_string());
    }
    require_same_shape(av, bv, "gate_blend_scalar");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = av[i] + gv[0] * (bv[i] - av[i]);
    }
    return push(OpKind::kGateBlendScalar, {gate.id, a.id, b.id}, std::move(out),
                [gate, a, b](Tape& t, const Tensor& g) {
                  const Tensor& gv = t.value(gate);
                  const Tensor& av = t.value(a);
                  const Tensor& bv = t.value(b);
                  Tensor& gg = t.grad_buffer(gate.id);
                  Tensor& ga = t.grad_buffer(a.id);
                  Tensor& gb = t.grad_buffer(b.id);
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    acc += g[i] * (bv[i] - av[i]);
                    ga[i] += g[i] * (1.0 - gv[0]);
                    gb[i] += g[i] * gv[0];
                  }
                  gg[0] += acc;
                });
  }

  // ---- normalization and scoring ----

  static constexpr double kNormEps = 1e-12;

  Var l2_normalize(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 1) {
      throw ValidationError("l2_normalize: expects a vector, got " +
                            xv.shape_string());
    }
    double norm = 0.0;
    for (double v : xv.data) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > kNormEps)) {
      throw NumericalError("l2_normalize: degenerate input with norm " +
                           std::to_string(norm));
    }
    Tensor out = xv;
    for (double& v : out.data) v /= norm;
    std::size_t out_id = nodes_.size();
    return push(OpKind::kL2Normalize, {x.id}, std::move(out),
                [x, out_id, norm](Tape& t, const Tensor& g) {
                  // d x = (g - y (y . g)) / ||x||
                  const Tensor& y = t.nodes_[out_id].value;
                  Tensor& gx = t.grad_buffer(x.id);
                  double yg = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += (g[i] - y[i] * yg) / norm;
                  }
                });
  }

  // softmax(tau * logits) with max subtraction.
  Var softmax_scaled(Var logits, double tau) {
    if (!(tau > 0.0)) {
      throw ValidationError("softmax_scaled: tau must be positive, got " +
                            std::to_string(tau));
    }
    const Tensor& x = value(logits);
    if (x.rank() != 1 || x.size() == 0) {
      throw ValidationError("softmax_scaled: expects a non-empty vector, got " +
                            x.shape_string());
    }
    double m = *std::max_element(x.data.begin(), x.data.end());
    Tensor out = x;
    double sum = 0.0;
    for (double& v : out.data) {
      v = std::exp(tau * (v - m));
      sum += v;
    }
    for (double& v : out.data) v /= sum;
    std::size_t out_id = nodes_.size();
    return push(OpKind::kSoftmaxScaled, {logits.id}, std::move(out),
                [logits, out_id, tau](Tape& t, const Tensor& g) {
                  const Tensor& y = t.nodes_[out_id].value;
                  Tensor& gx = t.grad_buffer(logits.id);
                  double yg = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += tau * y[i] * (g[i] - yg);
                  }
                });
  }

  // Cosine similarity of pref against every row of table: out[j] in [-1, 1].
  Var cosine_scores(Var pref, Var table) {
    const Tensor& p = value(pref);
    const Tensor& m = value(table);
    if (p.rank() != 1 || m.rank() != 2 || m.shape[1] != p.shape[0]) {
      throw ValidationError("cosine_scores: incompatible shapes " +
                            p.shape_string() + " and " + m.shape_string());
    }
    std::size_t n = m.shape[0], d = m.shape[1];
    double pn = 0.0;
    for (double v : p.data) pn += v * v;
    pn = std::sqrt(pn);
    if (!(pn > kNormEps)) {
      throw NumericalError("cosine_scores: zero-norm preference vector");
    }
    std::vector<double> row_norms(n);
    Tensor out = Tensor::zeros({n});
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = m.data.data() + j * d;
      double rn = 0.0, dp = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        rn += row[i] * row[i];
        dp += row[i] * p[i];
      }
      rn = std::sqrt(rn);
      if (!(rn > kNormEps)) {
        throw NumericalError("cosine_scores: zero-norm item row " +
                             std::to_string(j));
      }
      row_norms[j] = rn;
      out[j] = dp / (pn * rn);
    }
    std::size_t out_id = nodes_.size();
    return push(
        OpKind::kCosineScores, {pref.id, table.id}, std::move(out),
        [pref, table, out_id, pn, row_norms = std::move(row_norms), n,
         d](Tape& t, const Tensor& g) {
          const Tensor& p = t.value(pref);
          const Tensor& m = t.value(table);
          const Tensor& y = t.nodes_[out_id].value;
          Tensor& gp = t.grad_buffer(pref.id);
          Tensor& gm = t.grad_buffer(table.id);
          // d y_j / d p = (t_j/||t_j|| - y_j p/||p||) / ||p||
          // d y_j / d t_j = (p/||p|| - y_j t_j/||t_j||) / ||t_j||
          for (std::size_t j = 0; j < n; ++j) {
            double gj = g[j];
            if (gj == 0.0) continue;
            const double* row = m.data.data() + j * d;
            double* grow = gm.data.data() + j * d;
            double rn = row_norms[j];
            for (std::size_t i = 0; i < d; ++i) {
              double u = p[i] / pn;
              double w = row[i] / rn;
              gp[i] += gj * (w - y[j] * u) / pn;
              grow[i] += gj * (u - y[j] * w) / rn;
            }
          }
        });
  }

  // -log(probs[index]); the one-hot cross-entropy term.
  Var pick_neg_log(Var probs, std::size_t index) {
    const Tensor& p = value(probs);
    if (p.rank() != 1 || index >= p.size()) {
      throw ValidationError("pick_neg_log: index " + std::to_string(index) +
                            " out of range for " + p.shape_string());
    }
    if (!(p[index] > 0.0)) {
      throw NumericalError("pick_neg_log: non-positive probability " +
                           std::to_string(p[index]));
    }
    return push(OpKind::kPickNegLog, {probs.id}, Tensor::scalar(-std::log(p[index])),
                [probs, index](Tape& t, const Tensor& g) {
                  const Tensor& p = t.value(probs);
                  t.grad_buffer(probs.id)[index] -= g[0] / p[index];
                });
  }

  Var sum(Var x) {
    const Tensor& xv = value(x);
    double acc = 0.0;
    for (double v : xv.data) acc += v;
    return push(OpKind::kSum, {x.id}, Tensor::scalar(acc),
                [x](Tape& t, const Tensor& g) {
                  Tensor& gx = t.grad_buffer(x.id);
                  for (double& v : gx.data) v += g[0];
                });
  }

  // Affine map w x + b as one call; shows up everywhere in the model.
  Var affine(Var w, Var x, Var b) { return add(matvec(w, x), b); }

  // ---- backward ----

  // Seeds d(loss)=1 and sweeps the tape once in reverse insertion order.
  void backward(Var loss) {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
      throw ValidationError("backward: loss must be scalar, got " +
                            lv.shape_string());
    }
    if (!std::isfinite(lv[0])) {
      throw NumericalError("backward: loss is not finite");
    }
    grads_.clear();
    grads_.resize(nodes_.size());
    touched_.assign(nodes_.size(), false);
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!touched_[i]) continue;
      const Node& node = nodes_[i];
      if (node.back) node.back(*this, grads_[i]);
    }
    has_grads_ = true;
  }

  const Tensor& grad(Var v) const {
    if (!has_grads_) throw ValidationError("grad: backward has not been run");
    if (!touched_[v.id]) {
      zero_grad_scratch_ = Tensor::zeros(nodes_[v.id].value.shape);
      return zero_grad_scratch_;
    }
    return grads_[v.id];
  }

  OpKind kind(Var v) const { return nodes_[v.id].kind; }

 private:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn back;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value,
           BackwardFn back) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(back)});
    return Var{nodes_.size() - 1};
  }

  Tensor& grad_buffer(std::size_t id) {
    if (!touched_[id]) {
      grads_[id] = Tensor::zeros(nodes_[id].value.shape);
      touched_[id] = true;
    }
    return grads_[id];
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Tensor& dst = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void accumulate_scaled(std::size_t id, const Tensor& g, double c) {
    Tensor& dst = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
  }

  static void require_same_shape(const Tensor& a, const Tensor& b,
                                 const char* op) {
    if (!a.same_shape(b)) {
      throw ValidationError(std::string(op) + ": shape mismatch " +
                            a.shape_string() + " vs " + b.shape_string());
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
  bool has_grads_ = false;
  mutable Tensor zero_grad_scratch_;
};

// ---- gradient checking ----

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of a scalar function against central finite
// differences, coordinate by coordinate. `f` receives a fresh tape plus one
// leaf per parameter tensor and must return a scalar Var.
template <class F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor>& params,
                           double h = 1e-6) {
  if (!(h >= 1e-7 && h <= 1e-4)) {
    throw ValidationError("grad_check: step must be in [1e-7, 1e-4], got " +
                          std::to_string(h));
  }
  auto eval = [&](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (const Tensor& t : p) leaves.push_back(tape.leaf(t));
    Var y = f(tape, leaves);
    double value = tape.value(y)[0];
    if (!std::isfinite(value)) {
      throw NumericalError("grad_check: function value is not finite");
    }
    if (grads) {
      tape.backward(y);
      grads->clear();
      for (Var leaf : leaves) grads->push_back(tape.grad(leaf));
    }
    return value;
  };

  std::vector<Tensor> analytic;
  eval(params, &analytic);

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t ci = 0; ci < params[pi].size(); ++ci) {
      double saved = probe[pi][ci];
      probe[pi][ci] = saved + h;
      double up = eval(probe, nullptr);
      probe[pi][ci] = saved - h;
      double down = eval(probe, nullptr);
      probe[pi][ci] = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[pi][ci];
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_coord = ci;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace tempgnn
