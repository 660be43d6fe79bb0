#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "tempgnn/adam.hpp"
#include "tempgnn/buckets.hpp"
#include "tempgnn/error.hpp"
#include "tempgnn/model.hpp"

namespace tempgnn {

// Every knob of a run in one flat struct, mirroring the key = value config
// file format one to one.
struct RunConfig {
  std::string train_path;
  std::string test_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string metrics_path;

  std::size_t dim = 256;
  std::size_t layers = 6;
  double tau = 12.0;
  std::string tn = "q+a+g";
  std::string te = "q+a+g";
  std::size_t tn_buckets = 40;
  std::size_t te_buckets = 50;
  bool tie_direction_gates = false;
  double leaky_slope = 0.01;
  std::size_t max_len = 10;

  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::size_t lr_decay_period = 3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (dim < 1) throw ValidationError("config: dim must be >= 1");
    if (!(tau > 0.0)) throw ValidationError("config: tau must be > 0");
    EncoderSpec::parse(tn);
    EncoderSpec te_spec = EncoderSpec::parse(te);
    if (te_spec.kind == EncoderKind::kPosition) {
      throw ValidationError("config: position encoding is node-only");
    }
    if (tn_buckets < 1 || te_buckets < 1) {
      throw ValidationError("config: bucket counts must be >= 1");
    }
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
      throw ValidationError("config: leaky slope must be in (0, 1)");
    }
    if (max_len < 1) throw ValidationError("config: max_len must be >= 1");
    if (batch_size < 1) throw ValidationError("config: batch size must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
      throw ValidationError("config: val fraction must be in [0, 1)");
    }
    adam().validate();
  }

  ModelConfig model(std::size_t item_count) const {
    ModelConfig cfg;
    cfg.dim = dim;
    cfg.layers = layers;
    cfg.tau = tau;
    cfg.item_count = item_count;
    cfg.max_len = max_len;
    cfg.tn = EncoderSpec::parse(tn);
    cfg.te = EncoderSpec::parse(te);
    cfg.tn_buckets = tn_buckets;
    cfg.te_buckets = te_buckets;
    cfg.tie_direction_gates = tie_direction_gates;
    cfg.leaky_slope = leaky_slope;
    cfg.validate();
    return cfg;
  }

  AdamConfig adam() const {
    AdamConfig cfg;
    cfg.lr = lr;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.eps = adam_eps;
    cfg.weight_decay = weight_decay;
    cfg.lr_decay = lr_decay;
    cfg.lr_decay_period = lr_decay_period;
    return cfg;
  }

  void set(const std::string& key, const std::string& value);
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config: bad number for " + key + ": '" + value + "'");
  }
  if (pos != value.size() || !std::isfinite(out)) {
    throw ValidationError("config: bad number for " + key + ": '" + value + "'");
  }
  return out;
}

inline std::uint64_t parse_unsigned(const std::string& key,
                                    const std::string& value) {
  if (value.empty() ||
      value.find_first_not_of("0123456789") != std::string::npos) {
    throw ValidationError("config: bad unsigned integer for " + key + ": '" +
                          value + "'");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw ValidationError("config: bad unsigned integer for " + key + ": '" +
                          value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") {
    return true;
  }
  if (value == "false" || value == "0" || value == "no" || value == "off") {
    return false;
  }
  throw ValidationError("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_unsigned;
  if (key == "train") train_path = value;
  else if (key == "test") test_path = value;
  else if (key == "vocab") vocab_path = value;
  else if (key == "checkpoint") checkpoint_path = value;
  else if (key == "metrics") metrics_path = value;
  else if (key == "dim") dim = parse_unsigned(key, value);
  else if (key == "layers") layers = parse_unsigned(key, value);
  else if (key == "tau") tau = parse_double(key, value);
  else if (key == "tn") tn = value;
  else if (key == "te") te = value;
  else if (key == "tn_buckets") tn_buckets = parse_unsigned(key, value);
  else if (key == "te_buckets") te_buckets = parse_unsigned(key, value);
  else if (key == "tie_direction_gates") tie_direction_gates = parse_bool(key, value);
  else if (key == "leaky_slope") leaky_slope = parse_double(key, value);
  else if (key == "max_len") max_len = parse_unsigned(key, value);
  else if (key == "batch_size") batch_size = parse_unsigned(key, value);
  else if (key == "epochs") epochs = parse_unsigned(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "lr_decay") lr_decay = parse_double(key, value);
  else if (key == "lr_decay_period") lr_decay_period = parse_unsigned(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "val_fraction") val_fraction = parse_double(key, value);
  else if (key == "seed") seed = parse_unsigned(key, value);
  else if (key == "threads") threads = parse_unsigned(key, value);
  else throw ValidationError("config: unknown key '" + key + "'");
}

// One `key = value` assignment per line; '#' starts a comment; blank lines
// are skipped; unknown keys are hard errors.
inline void apply_config_line(RunConfig& cfg, const std::string& raw,
                              const std::string& where) {
  std::string line = raw;
  if (std::size_t hash = line.find('#'); hash != std::string::npos) {
    line.resize(hash);
  }
  line = detail::trim(line);
  if (line.empty()) return;
  std::size_t eq = line.find('=');
  if (eq == std::string::npos) {
    throw ValidationError(where + ": expected key = value, got '" + line + "'");
  }
  std::string key = detail::trim(line.substr(0, eq));
  std::string value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ValidationError(where + ": empty key");
  cfg.set(key, value);
}

inline RunConfig load_config(const std::string& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    apply_config_line(cfg, line, path + ":" + std::to_string(lineno));
  }
  return cfg;
}

inline std::string dump_config(const RunConfig& c) {
  std::ostringstream out;
  auto emit = [&](const char* key, const auto& value) {
    out << key << " = " << value << "\n";
  };
  if (!c.train_path.empty()) emit("train", c.train_path);
  if (!c.test_path.empty()) emit("test", c.test_path);
  if (!c.vocab_path.empty()) emit("vocab", c.vocab_path);
  if (!c.checkpoint_path.empty()) emit("checkpoint", c.checkpoint_path);
  if (!c.metrics_path.empty()) emit("metrics", c.metrics_path);
  emit("dim", c.dim);
  emit("layers", c.layers);
  emit("tau", c.tau);
  emit("tn", c.tn);
  emit("te", c.te);
  emit("tn_buckets", c.tn_buckets);
  emit("te_buckets", c.te_buckets);
  emit("tie_direction_gates", c.tie_direction_gates ? "true" : "false");
  emit("leaky_slope", c.leaky_slope);
  emit("max_len", c.max_len);
  emit("batch_size", c.batch_size);
  emit("epochs", c.epochs);
  emit("lr", c.lr);
  emit("lr_decay", c.lr_decay);
  emit("lr_decay_period", c.lr_decay_period);
  emit("weight_decay", c.weight_decay);
  emit("beta1", c.beta1);
  emit("beta2", c.beta2);
  emit("adam_eps", c.adam_eps);
  emit("val_fraction", c.val_fraction);
  emit("seed", c.seed);
  emit("threads", c.threads);
  return out.str();
}

}  // namespace tempgnn
