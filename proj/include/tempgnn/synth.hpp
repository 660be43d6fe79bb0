#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tempgnn/data.hpp"
#include "tempgnn/error.hpp"

namespace tempgnn {

struct SynthSpec {
  std::size_t n_items = 20;
  std::size_t n_sessions = 100;
  std::uint64_t seed = 1;
  bool temporal_signal = false;
  std::size_t min_events = 4;
  std::size_t max_events = 12;
};

// With temporal_signal the next item depends on (current item, gap regime);
// regimes use geometrically separated gap ranges so the gap alone names the
// regime. Without it the next item is a function of the current item only.
inline std::size_t synth_regime_count(std::size_t n_items) {
  return std::min<std::size_t>(6, n_items);
}

// Regime r draws its gap uniformly from [1000 * 6^r, 2000 * 6^r) ms; range
// ends stay a factor three below the next range's start.
inline std::int64_t synth_regime_gap_lo(std::size_t regime) {
  std::int64_t lo = 1000;
  for (std::size_t r = 0; r < regime; ++r) lo *= 6;
  return lo;
}

inline std::size_t synth_regime_of_gap(std::int64_t gap_ms,
                                       std::size_t regime_count) {
  std::size_t best = 0;
  for (std::size_t r = 0; r < regime_count; ++r) {
    if (gap_ms >= synth_regime_gap_lo(r)) best = r;
  }
  return best;
}

inline std::vector<Session> synth_corpus(const SynthSpec& spec) {
  if (spec.n_items < 4) {
    throw ValidationError("synth_corpus: need at least 4 items");
  }
  if (spec.n_sessions < 1) {
    throw ValidationError("synth_corpus: need at least 1 session");
  }
  if (spec.min_events < 2 || spec.max_events < spec.min_events) {
    throw ValidationError("synth_corpus: event count range must satisfy 2 <= "
                          "min <= max");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_events,
                                                         spec.max_events);
  std::uniform_int_distribution<std::size_t> item_dist(0, spec.n_items - 1);
  std::size_t regimes = synth_regime_count(spec.n_items);
  std::uniform_int_distribution<std::size_t> regime_dist(0, regimes - 1);

  const std::int64_t base_time = 1'600'000'000'000;  // fixed corpus epoch
  const std::int64_t session_stride = 3'600'000;

  std::vector<Session> out;
  out.reserve(spec.n_sessions);
  for (std::size_t s = 0; s < spec.n_sessions; ++s) {
    Session session;
    char sid[16];
    std::snprintf(sid, sizeof sid, "s%08zu", s);
    session.session_id = sid;
    std::size_t length = length_dist(rng);
    std::size_t cur = item_dist(rng);
    std::int64_t ts = base_time + static_cast<std::int64_t>(s) * session_stride;
    session.events.push_back(SessionEvent{"i" + std::to_string(cur), ts});
    for (std::size_t step = 1; step < length; ++step) {
      std::int64_t gap = 0;
      std::size_t next = 0;
      if (spec.temporal_signal) {
        std::size_t regime = regime_dist(rng);
        std::int64_t lo = synth_regime_gap_lo(regime);
        gap = std::uniform_int_distribution<std::int64_t>(lo, 2 * lo - 1)(rng);
        next = (cur + 1 + regime) % spec.n_items;
      } else {
        gap = std::uniform_int_distribution<std::int64_t>(1'000, 59'999)(rng);
        next = (cur + 1) % spec.n_items;
      }
      ts += gap;
      session.events.push_back(SessionEvent{"i" + std::to_string(next), ts});
      cur = next;
    }
    session.prediction_timestamp = session.events.back().timestamp;
    out.push_back(std::move(session));
  }
  return out;
}

// Raw CSV in the default parse_log layout, so the synthetic stream can run
// through the same preprocessing entry point as real logs.
inline void write_synth_log(const std::string& path,
                            const std::vector<Session>& sessions) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write log file: " + path);
  for (const Session& s : sessions) {
    for (const SessionEvent& e : s.events) {
      out << s.session_id << ',' << e.timestamp << ',' << e.item_id << '\n';
    }
  }
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace tempgnn
