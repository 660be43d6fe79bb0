#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "tempgnn/error.hpp"

namespace tempgnn {

// Maps a time difference to one of bucket_count buckets via sorted
// boundaries. A value equal to a boundary goes to the left bucket, so the
// index is the number of boundaries strictly below the input. Total for any
// input: negatives fall into bucket 0, huge values into the last bucket.
// Value is int64 milliseconds in the model; tests also instantiate double.
template <class Value = std::int64_t>
struct Bucketizer {
  std::size_t bucket_count = 1;
  std::vector<Value> boundaries;  // sorted, size bucket_count - 1, dups allowed

  std::size_t bucketize(Value diff) const {
    return static_cast<std::size_t>(
        std::lower_bound(boundaries.begin(), boundaries.end(), diff) -
        boundaries.begin());
  }
};

namespace detail {

// ceil(num * n / den) in exact integer arithmetic; 1-indexed rank.
inline std::size_t nearest_rank(std::size_t n, std::size_t num,
                                std::size_t den) {
  return (num * n + den - 1) / den;
}

template <class Value>
std::size_t count_distinct_sorted(const std::vector<Value>& sorted) {
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) ++distinct;
  }
  return distinct;
}

}  // namespace detail

// Equal-mass buckets: boundary k is the k/B nearest-rank quantile of the
// sample, so with distinct values and B | n every bucket gets n/B samples.
template <class Value = std::int64_t>
Bucketizer<Value> fit_quantile_buckets(std::vector<Value> diffs, std::size_t B,
                                       std::vector<std::string>* warnings = nullptr) {
  if (diffs.empty()) throw ValidationError("fit_quantile_buckets: empty sample");
  if (B < 1) throw ValidationError("fit_quantile_buckets: bucket count must be >= 1");
  std::sort(diffs.begin(), diffs.end());
  if (warnings && B > detail::count_distinct_sorted(diffs)) {
    warnings->push_back(
        "bucket count " + std::to_string(B) + " exceeds " +
        std::to_string(detail::count_distinct_sorted(diffs)) +
        " distinct time differences; some buckets will be empty");
  }
  Bucketizer<Value> out;
  out.bucket_count = B;
  out.boundaries.reserve(B - 1);
  std::size_t n = diffs.size();
  for (std::size_t k = 1; k < B; ++k) {
    out.boundaries.push_back(diffs[detail::nearest_rank(n, k, B) - 1]);
  }
  return out;
}

// Equal-width buckets over the sample range after dropping the bottom and
// top 2 percent (nearest-rank), the plain interval-splitting alternative.
template <class Value = std::int64_t>
Bucketizer<Value> fit_uniform_buckets(std::vector<Value> diffs, std::size_t B,
                                      std::vector<std::string>* warnings = nullptr) {
  if (diffs.empty()) throw ValidationError("fit_uniform_buckets: empty sample");
  if (B < 1) throw ValidationError("fit_uniform_buckets: bucket count must be >= 1");
  std::sort(diffs.begin(), diffs.end());
  std::size_t n = diffs.size();
  std::size_t lo_rank = std::max<std::size_t>(detail::nearest_rank(n, 2, 100), 1);
  std::size_t hi_rank = std::max<std::size_t>(detail::nearest_rank(n, 98, 100), 1);
  Value lo = diffs[lo_rank - 1];
  Value hi = diffs[hi_rank - 1];
  if (warnings && hi == lo) {
    warnings->push_back("clipped range is a single point; all boundaries coincide");
  }
  Bucketizer<Value> out;
  out.bucket_count = B;
  out.boundaries.reserve(B - 1);
  for (std::size_t k = 1; k < B; ++k) {
    if constexpr (std::is_integral_v<Value>) {
      out.boundaries.push_back(
          lo + static_cast<Value>((static_cast<std::int64_t>(hi - lo) *
                                   static_cast<std::int64_t>(k)) /
                                  static_cast<std::int64_t>(B)));
    } else {
      out.boundaries.push_back(lo + (hi - lo) * static_cast<Value>(k) /
                                        static_cast<Value>(B));
    }
  }
  return out;
}

// Min-max range of training diffs for the single-vector constant encoder.
struct DiffRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  static DiffRange fit(const std::vector<std::int64_t>& diffs) {
    if (diffs.empty()) throw ValidationError("DiffRange::fit: empty sample");
    auto [mn, mx] = std::minmax_element(diffs.begin(), diffs.end());
    return DiffRange{*mn, *mx};
  }

  // Scale into [0, 1], clamping out-of-range queries to the endpoints.
  double normalize(std::int64_t diff) const {
    if (hi <= lo) return diff >= hi ? 1.0 : 0.0;
    if (diff <= lo) return 0.0;
    if (diff >= hi) return 1.0;
    return static_cast<double>(diff - lo) / static_cast<double>(hi - lo);
  }
};

// Which temporal encoder runs on nodes (TN) or edges (TE), plus the optional
// activation and gate stages layered on the bucket pipelines.
enum class EncoderKind { kNone, kPosition, kConstant, kBucket, kQuantile };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kQuantile;
  bool activation = false;
  bool gate = false;

  bool uses_bucket_table() const {
    return kind == EncoderKind::kBucket || kind == EncoderKind::kQuantile;
  }
  bool uses_diff() const {
    return kind == EncoderKind::kConstant || uses_bucket_table();
  }
  bool enabled() const { return kind != EncoderKind::kNone; }

  static EncoderSpec parse(const std::string& text) {
    EncoderSpec spec;
    if (text == "none" || text == "base") {
      spec.kind = EncoderKind::kNone;
      return spec;
    }
    if (text == "position") {
      spec.kind = EncoderKind::kPosition;
      return spec;
    }
    if (text == "constant") {
      spec.kind = EncoderKind::kConstant;
      return spec;
    }
    if (text == "bucket") {
      spec.kind = EncoderKind::kBucket;
      return spec;
    }
    if (!text.empty() && text[0] == 'q') {
      spec.kind = EncoderKind::kQuantile;
      std::size_t pos = 1;
      while (pos < text.size()) {
        if (text[pos] != '+' || pos + 1 >= text.size()) break;
        char flag = text[pos + 1];
        if (flag == 'a' && !spec.activation) {
          spec.activation = true;
        } else if (flag == 'g' && !spec.gate) {
          spec.gate = true;
        } else {
          break;
        }
        pos += 2;
      }
      if (pos == text.size()) return spec;
    }
    throw ValidationError(
        "unknown encoder variant '" + text +
        "' (expected none|position|constant|bucket|q|q+a|q+g|q+a+g)");
  }

  std::string to_string() const {
    switch (kind) {
      case EncoderKind::kNone: return "none";
      case EncoderKind::kPosition: return "position";
      case EncoderKind::kConstant: return "constant";
      case EncoderKind::kBucket: return "bucket";
      case EncoderKind::kQuantile: {
        std::string s = "q";
        if (activation) s += "+a";
        if (gate) s += "+g";
        return s;
      }
    }
    return "none";
  }
};

}  // namespace tempgnn
