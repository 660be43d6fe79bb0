#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tempgnn/error.hpp"
#include "tempgnn/model.hpp"

namespace tempgnn {

namespace detail {

// Explicit little-endian encoding so checkpoints are portable and the
// round-trip stays bitwise exact.
inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 4);
}

inline void put_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline void put_i64(std::ostream& out, std::int64_t v) {
  put_u64(out, static_cast<std::uint64_t>(v));
}

inline void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) {
    throw ValidationError("checkpoint: truncated file");
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw ValidationError("checkpoint: truncated file");
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::uint8_t get_u8(std::istream& in) {
  int c = in.get();
  if (c == std::char_traits<char>::eof()) {
    throw ValidationError("checkpoint: truncated file");
  }
  return static_cast<std::uint8_t>(c);
}

inline std::int64_t get_i64(std::istream& in) {
  return static_cast<std::int64_t>(get_u64(in));
}

inline double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

inline void put_bucketizer(std::ostream& out, const Bucketizer<>& b) {
  put_u64(out, b.bucket_count);
  put_u64(out, b.boundaries.size());
  for (std::int64_t v : b.boundaries) put_i64(out, v);
}

inline Bucketizer<> get_bucketizer(std::istream& in) {
  Bucketizer<> b;
  b.bucket_count = get_u64(in);
  std::uint64_t n = get_u64(in);
  if (b.bucket_count < 1 || n >= b.bucket_count) {
    throw ValidationError("checkpoint: inconsistent bucketizer");
  }
  b.boundaries.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) b.boundaries[i] = get_i64(in);
  for (std::uint64_t i = 1; i < n; ++i) {
    if (b.boundaries[i] < b.boundaries[i - 1]) {
      throw ValidationError("checkpoint: bucket boundaries not sorted");
    }
  }
  return b;
}

inline std::uint8_t encoder_kind_id(EncoderKind k) {
  return static_cast<std::uint8_t>(k);
}

inline EncoderKind encoder_kind_from_id(std::uint8_t id) {
  if (id > static_cast<std::uint8_t>(EncoderKind::kQuantile)) {
    throw ValidationError("checkpoint: unknown encoder variant id " +
                          std::to_string(id));
  }
  return static_cast<EncoderKind>(id);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'N', 'N',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
  namespace d = detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  const ModelConfig& c = params.config;
  out.write(kCheckpointMagic, 8);
  d::put_u32(out, kCheckpointVersion);
  d::put_u64(out, c.dim);
  d::put_u64(out, c.layers);
  d::put_f64(out, c.tau);
  d::put_u64(out, c.item_count);
  d::put_u64(out, c.tn_buckets);
  d::put_u64(out, c.te_buckets);
  d::put_u8(out, d::encoder_kind_id(c.tn.kind));
  d::put_u8(out, c.tn.activation ? 1 : 0);
  d::put_u8(out, c.tn.gate ? 1 : 0);
  d::put_u8(out, d::encoder_kind_id(c.te.kind));
  d::put_u8(out, c.te.activation ? 1 : 0);
  d::put_u8(out, c.te.gate ? 1 : 0);
  d::put_u8(out, c.tie_direction_gates ? 1 : 0);
  d::put_u8(out, 0);  // reserved
  d::put_u64(out, c.max_len);
  d::put_f64(out, c.leaky_slope);
  d::put_bucketizer(out, params.tn_bucketizer);
  d::put_bucketizer(out, params.te_bucketizer);
  d::put_i64(out, params.tn_range.lo);
  d::put_i64(out, params.tn_range.hi);
  d::put_i64(out, params.te_range.lo);
  d::put_i64(out, params.te_range.hi);
  d::put_u64(out, params.tensor_count());
  params.visit([&](const char* name, const Tensor& t) {
    std::string n(name);
    d::put_u64(out, n.size());
    out.write(n.data(), static_cast<std::streamsize>(n.size()));
    d::put_u64(out, t.rank());
    for (std::size_t dim : t.shape) d::put_u64(out, dim);
    for (double v : t.data) d::put_f64(out, v);
  });
  if (!out) throw ValidationError("checkpoint write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  namespace d = detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ValidationError("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = d::get_u32(in);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " +
                          std::to_string(version));
  }
  ModelConfig c;
  c.dim = d::get_u64(in);
  c.layers = d::get_u64(in);
  c.tau = d::get_f64(in);
  c.item_count = d::get_u64(in);
  c.tn_buckets = d::get_u64(in);
  c.te_buckets = d::get_u64(in);
  c.tn.kind = d::encoder_kind_from_id(d::get_u8(in));
  c.tn.activation = d::get_u8(in) != 0;
  c.tn.gate = d::get_u8(in) != 0;
  c.te.kind = d::encoder_kind_from_id(d::get_u8(in));
  c.te.activation = d::get_u8(in) != 0;
  c.te.gate = d::get_u8(in) != 0;
  c.tie_direction_gates = d::get_u8(in) != 0;
  d::get_u8(in);  // reserved
  c.max_len = d::get_u64(in);
  c.leaky_slope = d::get_f64(in);
  c.validate();

  ModelParams params = make_params(c);
  params.tn_bucketizer = d::get_bucketizer(in);
  params.te_bucketizer = d::get_bucketizer(in);
  params.tn_range.lo = d::get_i64(in);
  params.tn_range.hi = d::get_i64(in);
  params.te_range.lo = d::get_i64(in);
  params.te_range.hi = d::get_i64(in);

  std::uint64_t tensor_count = d::get_u64(in);
  if (tensor_count != params.tensor_count()) {
    throw ValidationError(
        "checkpoint: expected " + std::to_string(params.tensor_count()) +
        " tensors for this configuration, found " +
        std::to_string(tensor_count));
  }
  params.visit([&](const char* name, Tensor& t) {
    std::uint64_t name_len = d::get_u64(in);
    if (name_len > 256) throw ValidationError("checkpoint: oversized tensor name");
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), static_cast<std::streamsize>(name_len))) {
      throw ValidationError("checkpoint: truncated file");
    }
    if (stored != name) {
      throw ValidationError("checkpoint: expected tensor '" +
                            std::string(name) + "', found '" + stored + "'");
    }
    std::uint64_t rank = d::get_u64(in);
    if (rank != t.rank()) {
      throw ValidationError("checkpoint: rank mismatch for " + stored);
    }
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) shape[i] = d::get_u64(in);
    if (shape != t.shape) {
      throw ValidationError("checkpoint: shape mismatch for " + stored);
    }
    for (double& v : t.data) v = d::get_f64(in);
  });
  in.peek();
  if (!in.eof()) {
    throw ValidationError("checkpoint: trailing bytes in " + path);
  }
  return params;
}

}  // namespace tempgnn
