#pragma once

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tempgnn/error.hpp"

namespace tempgnn {

struct SessionEvent {
  std::string item_id;
  std::int64_t timestamp = 0;  // epoch milliseconds
};

struct Session {
  std::string session_id;
  std::vector<SessionEvent> events;  // non-decreasing timestamps
  std::int64_t prediction_timestamp = 0;
};

struct IndexedEvent {
  std::size_t item = 0;
  std::int64_t timestamp = 0;
};

struct IndexedSession {
  std::string session_id;
  std::vector<IndexedEvent> events;
};

// A prefix of a session plus the click to predict. prediction_timestamp is
// the target click's own timestamp; at serving time the caller supplies it.
struct LabeledInstance {
  std::vector<IndexedEvent> prefix;  // already truncated to the recent max_len
  std::size_t target_item = 0;
  std::int64_t prediction_timestamp = 0;
};

class Vocabulary {
 public:
  std::size_t add(const std::string& key) {
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    keys_.push_back(key);
    index_.emplace(key, keys_.size() - 1);
    return keys_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& key(std::size_t index) const {
    if (index >= keys_.size()) {
      throw ValidationError("vocabulary index " + std::to_string(index) +
                            " out of range (size " +
                            std::to_string(keys_.size()) + ")");
    }
    return keys_[index];
  }

  std::size_t size() const { return keys_.size(); }

  // First-occurrence order over sessions (which are session_id-sorted), so
  // the mapping is reproducible no matter how parsing was parallelized.
  static Vocabulary build(const std::vector<Session>& sessions) {
    Vocabulary v;
    for (const Session& s : sessions) {
      for (const SessionEvent& e : s.events) v.add(e.item_id);
    }
    return v;
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- parsing ----

namespace detail {

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

// Epoch milliseconds, either as a plain integer or an ISO-8601 datetime
// like 2014-04-07T10:51:09.277Z (UTC assumed when no zone is given).
inline std::int64_t parse_timestamp_ms(const std::string& text) {
  if (text.empty()) throw ValidationError("empty timestamp");
  if (detail::all_digits(text)) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(text.c_str(), &end, 10);
    if (errno != 0 || end != text.c_str() + text.size()) {
      throw ValidationError("timestamp out of range: " + text);
    }
    return static_cast<std::int64_t>(v);
  }
  int year = 0, mon = 0, day = 0, hour = 0, min = 0, sec = 0, consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%*1[T ]%2d:%2d:%2d%n", &year, &mon,
                  &day, &hour, &min, &sec, &consumed) != 6) {
    throw ValidationError("unparseable timestamp: " + text);
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  std::int64_t millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::size_t digits = 0;
    std::int64_t frac = 0;
    while (pos < text.size() &&
           std::isdigit(static_cast<unsigned char>(text[pos]))) {
      if (digits < 3) frac = frac * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw ValidationError("unparseable timestamp: " + text);
    while (digits < 3) {
      frac *= 10;
      ++digits;
    }
    millis = frac;
  }
  if (pos < text.size()) {
    if (text.substr(pos) != "Z") {
      throw ValidationError("unsupported timestamp suffix: " + text);
    }
  }
  if (mon < 1 || mon > 12 || day < 1 || day > 31 || hour > 23 || min > 59 ||
      sec > 60) {
    throw ValidationError("timestamp fields out of range: " + text);
  }
  std::tm tm{};
  tm.tm_year = year - 1900;
  tm.tm_mon = mon - 1;
  tm.tm_mday = day;
  tm.tm_hour = hour;
  tm.tm_min = min;
  tm.tm_sec = sec;
  std::time_t seconds = timegm(&tm);
  if (seconds == static_cast<std::time_t>(-1)) {
    throw ValidationError("timestamp out of range: " + text);
  }
  return static_cast<std::int64_t>(seconds) * 1000 + millis;
}

// "250ms", "30s", "5m", "2h", "1d", "1w"; a bare integer means milliseconds.
inline std::int64_t parse_duration_ms(const std::string& text) {
  if (text.empty()) throw ValidationError("empty duration");
  std::size_t pos = 0;
  while (pos < text.size() &&
         std::isdigit(static_cast<unsigned char>(text[pos]))) {
    ++pos;
  }
  if (pos == 0) throw ValidationError("unparseable duration: " + text);
  std::int64_t value = 0;
  try {
    value = std::stoll(text.substr(0, pos));
  } catch (const std::exception&) {
    throw ValidationError("duration out of range: " + text);
  }
  std::string unit = text.substr(pos);
  std::int64_t scale = 0;
  if (unit.empty() || unit == "ms") scale = 1;
  else if (unit == "s") scale = 1000;
  else if (unit == "m") scale = 60'000;
  else if (unit == "h") scale = 3'600'000;
  else if (unit == "d") scale = 86'400'000;
  else if (unit == "w") scale = 7 * 86'400'000LL;
  else throw ValidationError("unknown duration unit '" + unit + "' in " + text);
  return value * scale;
}

// How to find (session_id, timestamp, item_id) inside a delimited log row.
// Column selectors are 0-based positions or, with header=true, header names.
struct ColumnSpec {
  char delimiter = ',';
  bool header = false;
  std::string session_column = "0";
  std::string time_column = "1";
  std::string item_column = "2";
};

inline std::vector<Session> parse_log_stream(std::istream& in,
                                             const std::string& source_name,
                                             const ColumnSpec& spec = {}) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ValidationError {
    return ValidationError(source_name + ":" + std::to_string(line_no) + ": " +
                           msg);
  };

  std::unordered_map<std::string, std::size_t> header_index;
  bool header_pending = spec.header;

  auto resolve = [&](const std::string& selector) -> std::size_t {
    if (detail::all_digits(selector)) return std::stoull(selector);
    auto it = header_index.find(selector);
    if (it == header_index.end()) {
      throw ValidationError(source_name + ": column '" + selector +
                            "' not found" +
                            (spec.header ? "" : " (no header configured)"));
    }
    return it->second;
  };

  std::size_t session_col = 0, time_col = 0, item_col = 0;
  bool resolved = false;

  std::map<std::string, std::vector<SessionEvent>> grouped;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split(line, spec.delimiter);
    if (header_pending) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        header_index.emplace(fields[i], i);
      }
      header_pending = false;
      continue;
    }
    if (!resolved) {
      session_col = resolve(spec.session_column);
      time_col = resolve(spec.time_column);
      item_col = resolve(spec.item_column);
      resolved = true;
    }
    std::size_t needed = std::max({session_col, time_col, item_col});
    if (needed >= fields.size()) {
      throw fail("expected at least " + std::to_string(needed + 1) +
                 " columns, got " + std::to_string(fields.size()));
    }
    const std::string& sid = fields[session_col];
    const std::string& item = fields[item_col];
    if (sid.empty()) throw fail("empty session id");
    if (item.empty()) throw fail("empty item id");
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp_ms(fields[time_col]);
    } catch (const ValidationError& e) {
      throw fail(e.what());
    }
    if (ts < 0) throw fail("negative timestamp: " + fields[time_col]);
    grouped[sid].push_back(SessionEvent{item, ts});
  }

  std::vector<Session> out;
  out.reserve(grouped.size());
  for (auto& [sid, events] : grouped) {
    std::stable_sort(events.begin(), events.end(),
                     [](const SessionEvent& a, const SessionEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
    Session s;
    s.session_id = sid;
    s.prediction_timestamp = events.back().timestamp;
    s.events = std::move(events);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Session> parse_log(const std::string& path,
                                      const ColumnSpec& spec = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open log file: " + path);
  return parse_log_stream(in, path, spec);
}

// ---- preprocessing ----

// Drops items seen fewer than min_item_count times and sessions shorter than
// two events, repeating until both filters are simultaneously satisfied.
inline std::pair<std::vector<Session>, Vocabulary> preprocess(
    std::vector<Session> sessions, std::size_t min_item_count = 5) {
  if (min_item_count < 1) {
    throw ValidationError("preprocess: min_item_count must be >= 1");
  }
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, std::size_t> counts;
    for (const Session& s : sessions) {
      for (const SessionEvent& e : s.events) ++counts[e.item_id];
    }
    std::vector<Session> next;
    next.reserve(sessions.size());
    for (Session& s : sessions) {
      std::vector<SessionEvent> kept;
      kept.reserve(s.events.size());
      for (SessionEvent& e : s.events) {
        if (counts[e.item_id] >= min_item_count) kept.push_back(std::move(e));
      }
      if (kept.size() != s.events.size()) changed = true;
      if (kept.size() >= 2) {
        s.events = std::move(kept);
        next.push_back(std::move(s));
      } else {
        changed = changed || !s.events.empty();
      }
    }
    sessions = std::move(next);
  }
  if (sessions.empty()) {
    throw ValidationError(
        "preprocess: filtering removed every session; relax min_item_count "
        "or provide more data");
  }
  Vocabulary vocab = Vocabulary::build(sessions);
  return {std::move(sessions), std::move(vocab)};
}

struct TimeSplit {
  std::vector<Session> train;
  std::vector<Session> test;
};

// Sessions whose last event lies within window_ms of the corpus max go to
// test (distance <= window). Test events with items unseen in train are
// removed, and test sessions left shorter than two events are dropped.
inline TimeSplit split_by_time(std::vector<Session> sessions,
                               std::int64_t window_ms) {
  if (window_ms <= 0) throw ValidationError("split_by_time: window must be > 0");
  if (sessions.empty()) throw ValidationError("split_by_time: no sessions");
  std::int64_t corpus_max = 0;
  for (const Session& s : sessions) {
    corpus_max = std::max(corpus_max, s.events.back().timestamp);
  }
  TimeSplit split;
  for (Session& s : sessions) {
    if (corpus_max - s.events.back().timestamp <= window_ms) {
      split.test.push_back(std::move(s));
    } else {
      split.train.push_back(std::move(s));
    }
  }
  if (split.train.empty()) {
    throw ValidationError(
        "split_by_time: the test window covers the whole corpus; no training "
        "sessions remain");
  }
  std::unordered_set<std::string> train_items;
  for (const Session& s : split.train) {
    for (const SessionEvent& e : s.events) train_items.insert(e.item_id);
  }
  std::vector<Session> kept_test;
  kept_test.reserve(split.test.size());
  for (Session& s : split.test) {
    std::vector<SessionEvent> kept;
    kept.reserve(s.events.size());
    for (SessionEvent& e : s.events) {
      if (train_items.count(e.item_id)) kept.push_back(std::move(e));
    }
    if (kept.size() >= 2) {
      s.events = std::move(kept);
      kept_test.push_back(std::move(s));
    }
  }
  split.test = std::move(kept_test);
  return split;
}

// Most recent fraction of sessions by last-event time, for corpus scaling.
inline std::vector<Session> keep_last_fraction(std::vector<Session> sessions,
                                               double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("keep_last_fraction: fraction must be in (0, 1]");
  }
  if (fraction == 1.0 || sessions.empty()) return sessions;
  std::stable_sort(sessions.begin(), sessions.end(),
                   [](const Session& a, const Session& b) {
                     return a.events.back().timestamp <
                            b.events.back().timestamp;
                   });
  std::size_t keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(sessions.size())));
  keep = std::max<std::size_t>(keep, 1);
  sessions.erase(sessions.begin(), sessions.end() - static_cast<std::ptrdiff_t>(keep));
  std::stable_sort(sessions.begin(), sessions.end(),
                   [](const Session& a, const Session& b) {
                     return a.session_id < b.session_id;
                   });
  return sessions;
}

inline std::vector<IndexedSession> index_sessions(
    const std::vector<Session>& sessions, const Vocabulary& vocab) {
  std::vector<IndexedSession> out;
  out.reserve(sessions.size());
  for (const Session& s : sessions) {
    IndexedSession is;
    is.session_id = s.session_id;
    is.events.reserve(s.events.size());
    for (const SessionEvent& e : s.events) {
      auto idx = vocab.find(e.item_id);
      if (!idx) {
        throw ValidationError("session " + s.session_id + " references item '" +
                              e.item_id + "' missing from the vocabulary");
      }
      is.events.push_back(IndexedEvent{*idx, e.timestamp});
    }
    out.push_back(std::move(is));
  }
  return out;
}

// Sub-sequence expansion: a session of n events yields n-1 instances, one
// per split point, each predicting event j from the events before it at the
// moment it happened. Prefixes keep only their most recent max_len events.
inline std::vector<LabeledInstance> expand(
    const std::vector<IndexedSession>& sessions, std::size_t max_len = 10) {
  if (max_len < 1) throw ValidationError("expand: max_len must be >= 1");
  std::vector<LabeledInstance> out;
  for (const IndexedSession& s : sessions) {
    for (std::size_t j = 1; j < s.events.size(); ++j) {
      LabeledInstance inst;
      std::size_t start = j > max_len ? j - max_len : 0;
      inst.prefix.assign(s.events.begin() + static_cast<std::ptrdiff_t>(start),
                         s.events.begin() + static_cast<std::ptrdiff_t>(j));
      inst.target_item = s.events[j].item;
      inst.prediction_timestamp = s.events[j].timestamp;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

// ---- corpus and vocabulary files ----

// One line per session: session_id <TAB> item:timestamp,item:timestamp,...
inline void write_corpus(const std::string& path,
                         const std::vector<IndexedSession>& sessions) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write corpus file: " + path);
  for (const IndexedSession& s : sessions) {
    out << s.session_id << '\t';
    for (std::size_t i = 0; i < s.events.size(); ++i) {
      if (i) out << ',';
      out << s.events[i].item << ':' << s.events[i].timestamp;
    }
    out << '\n';
  }
  if (!out) throw ValidationError("write failed: " + path);
}

inline std::vector<IndexedSession> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  std::vector<IndexedSession> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) -> ValidationError {
      return ValidationError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw fail("missing tab separator");
    IndexedSession s;
    s.session_id = line.substr(0, tab);
    if (s.session_id.empty()) throw fail("empty session id");
    for (const std::string& tok :
         detail::split(line.substr(tab + 1), ',')) {
      std::size_t colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size()) {
        throw fail("malformed event '" + tok + "'");
      }
      IndexedEvent e;
      try {
        e.item = std::stoull(tok.substr(0, colon));
        e.timestamp = std::stoll(tok.substr(colon + 1));
      } catch (const std::exception&) {
        throw fail("malformed event '" + tok + "'");
      }
      if (e.timestamp < 0) throw fail("negative timestamp in '" + tok + "'");
      if (!s.events.empty() && e.timestamp < s.events.back().timestamp) {
        throw fail("timestamps decrease within session " + s.session_id);
      }
      s.events.push_back(e);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write vocabulary file: " + path);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.key(i) << '\t' << i << '\n';
  }
  if (!out) throw ValidationError("write failed: " + path);
}

inline Vocabulary read_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary file: " + path);
  std::vector<std::pair<std::string, std::size_t>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": expected key<TAB>index");
    }
    std::size_t idx = 0;
    try {
      idx = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": malformed index");
    }
    pairs.emplace_back(line.substr(0, tab), idx);
  }
  std::vector<std::string> keys(pairs.size());
  std::vector<bool> seen(pairs.size(), false);
  for (const auto& [key, idx] : pairs) {
    if (idx >= pairs.size() || seen[idx]) {
      throw ValidationError(path + ": vocabulary indices are not a dense "
                            "permutation of 0.." +
                            std::to_string(pairs.size() - 1));
    }
    seen[idx] = true;
    keys[idx] = key;
  }
  Vocabulary vocab;
  for (const std::string& key : keys) {
    if (vocab.find(key)) {
      throw ValidationError(path + ": duplicate item key '" + key + "'");
    }
    vocab.add(key);
  }
  return vocab;
}

}  // namespace tempgnn
