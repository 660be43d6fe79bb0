#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tempgnn/error.hpp"
#include "tempgnn/model.hpp"
#include "tempgnn/tensor.hpp"

namespace tempgnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  double lr_decay = 0.1;
  std::size_t lr_decay_period = 3;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ValidationError("adam: learning rate must be positive and finite");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ValidationError("adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ValidationError("adam: eps must be positive");
    if (!(weight_decay >= 0.0)) {
      throw ValidationError("adam: weight decay must be >= 0");
    }
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
      throw ValidationError("adam: lr decay factor must be in (0, 1]");
    }
    if (lr_decay_period < 1) {
      throw ValidationError("adam: lr decay period must be >= 1");
    }
  }
};

// base_lr * decay^floor(epoch / period); a pure function of the epoch index.
inline double scheduled_lr(const AdamConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.lr_decay,
                           static_cast<double>(epoch / cfg.lr_decay_period));
}

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

inline AdamState make_adam_state(const AdamConfig& cfg,
                                 const std::vector<Tensor*>& params) {
  cfg.validate();
  AdamState state;
  state.config = cfg;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const Tensor* t : params) {
    state.m.push_back(Tensor::zeros(t->shape));
    state.v.push_back(Tensor::zeros(t->shape));
  }
  return state;
}

// One Adam update with bias correction. L2 regularization enters as a
// gradient term (g + wd * theta) before the moment accumulators, and the
// step size follows the epoch schedule.
inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<Tensor>& grads,
                      const std::vector<std::string>& names, AdamState& state,
                      std::size_t epoch) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      (!names.empty() && names.size() != params.size())) {
    throw ValidationError("adam_step: parameter, gradient and state counts differ");
  }
  const AdamConfig& cfg = state.config;
  ++state.step;
  double lr = scheduled_lr(cfg, epoch);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i];
    const Tensor& g = grads[i];
    if (!theta.same_shape(g)) {
      throw ValidationError("adam_step: gradient shape mismatch for " +
                            (names.empty() ? std::to_string(i) : names[i]));
    }
    if (!g.all_finite()) {
      throw NumericalError("adam_step: non-finite gradient in " +
                           (names.empty() ? std::to_string(i) : names[i]));
    }
    Tensor& mi = state.m[i];
    Tensor& vi = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      double grad = g[k] + cfg.weight_decay * theta[k];
      mi[k] = cfg.beta1 * mi[k] + (1.0 - cfg.beta1) * grad;
      vi[k] = cfg.beta2 * vi[k] + (1.0 - cfg.beta2) * grad * grad;
      double m_hat = mi[k] / bc1;
      double v_hat = vi[k] / bc2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// Convenience wrapper over the model's active tensors in visit order.
inline AdamState make_adam_state(const AdamConfig& cfg, ModelParams& params) {
  std::vector<Tensor*> refs;
  params.visit([&](const char*, Tensor& t) { refs.push_back(&t); });
  return make_adam_state(cfg, refs);
}

inline void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
                      AdamState& state, std::size_t epoch) {
  std::vector<Tensor*> refs;
  std::vector<std::string> names;
  params.visit([&](const char* name, Tensor& t) {
    refs.push_back(&t);
    names.push_back(name);
  });
  adam_step(refs, grads, names, state, epoch);
}

}  // namespace tempgnn
