#ifndef EVICTLAB_TESTS_SUPPORT_HPP
#define EVICTLAB_TESTS_SUPPORT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "evictlab/engine.hpp"
#include "evictlab/trace.hpp"

namespace evictlab::test_support {

inline std::string data_path(const std::string& rel) { return std::string(EVICTLAB_DATA_DIR) + "/" + rel; }

inline std::vector<std::string> bundled_trace_names() {
  return {"churn_small",   "loop_scan",  "loop_then_zipf", "s1",       "scan_churn",     "scan_heavy",
          "shifting_zipf", "zipf_a06",   "zipf_a12",       "zipf_scan", "zipf_then_loop", "zipf_wide_sizes"};
}

inline Trace bundled_trace(const std::string& name) { return parse_csv_trace(data_path("traces/" + name + ".csv")); }

/// Per-request hit flags and eviction ids recorded through the observer hook.
struct Recorder : SimObserver {
  std::vector<bool> hits;
  std::vector<ObjectId> evicted;
  void on_request(const Request&, bool hit) override { hits.push_back(hit); }
  void on_evict(const EvictionRecord& r) override { evicted.push_back(r.id); }
};

enum class RefKind { lru, fifo, lfu };

/// Straightforward reference caches, written independently of the engine:
/// an ordered set keyed by (priority, insertion order) with the minimum
/// evicted first. Bytes or slots depending on `size_agnostic`.
inline Recorder reference_run(const Trace& trace, RefKind kind, std::uint64_t capacity, bool size_agnostic) {
  struct Entry {
    std::int64_t key;
    std::uint64_t order;
    std::uint64_t size;
  };
  std::unordered_map<ObjectId, Entry> live;
  std::set<std::tuple<std::int64_t, std::uint64_t, ObjectId>> queue;
  std::uint64_t used = 0, order = 0;
  Recorder rec;
  auto evict_min = [&] {
    const auto [k, o, id] = *queue.begin();
    queue.erase(queue.begin());
    used -= live.at(id).size;
    live.erase(id);
    rec.evicted.push_back(id);
  };
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Request& r = trace[i];
    const std::uint64_t size = size_agnostic ? 1 : r.size;
    const auto t = static_cast<std::int64_t>(i);
    auto it = live.find(r.id);
    if (it != live.end()) {
      Entry& e = it->second;
      queue.erase({e.key, e.order, r.id});
      if (kind == RefKind::lru) e.key = t;
      if (kind == RefKind::lfu) e.key += 1;
      used = used - e.size + size;
      e.size = size;
      queue.insert({e.key, e.order, r.id});
      while (used > capacity) evict_min();
      rec.hits.push_back(true);
      continue;
    }
    rec.hits.push_back(false);
    if (size > capacity) continue;
    while (used + size > capacity) evict_min();
    Entry e{kind == RefKind::lfu ? 1 : t, order++, size};
    live[r.id] = e;
    queue.insert({e.key, e.order, r.id});
    used += size;
  }
  return rec;
}

inline std::uint64_t count_true(const std::vector<bool>& v) {
  std::uint64_t n = 0;
  for (bool b : v) n += b;
  return n;
}

}  // namespace evictlab::test_support

#endif  // EVICTLAB_TESTS_SUPPORT_HPP
