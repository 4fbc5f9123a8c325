#ifndef EVICTLAB_ENGINE_HPP
#define EVICTLAB_ENGINE_HPP

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "evictlab/dsl.hpp"
#include "evictlab/order_stat.hpp"
#include "evictlab/trace.hpp"

namespace evictlab {

enum class CacheMode { size_aware, size_agnostic };

struct CacheConfig {
  /// Bytes in size_aware mode, object slots in size_agnostic mode.
  std::uint64_t capacity = 1;
  CacheMode mode = CacheMode::size_aware;
  std::size_t history_capacity = 4096;
  /// Seeds policy-internal randomness (SampleSort).
  std::uint64_t seed = 0;
  /// Total program nodes a policy may evaluate in one run; 0 = unlimited.
  std::uint64_t eval_budget = 0;
};

struct ObjectMeta {
  std::int64_t count = 1;
  VTime last_access_vtime = 0;
  VTime addition_vtime = 0;
  std::uint64_t size = 1;
  /// Cache insertion sequence number; unique per residency and used for tie-breaks.
  std::uint64_t seq = 0;
};

struct EvictionRecord {
  ObjectId id = 0;
  VTime eviction_vtime = 0;
  std::int64_t count_at_eviction = 0;
  std::int64_t age_at_eviction_time = 0;

  friend bool operator==(const EvictionRecord&, const EvictionRecord&) = default;
};

/// Raised by a policy when it cannot continue (e.g. evaluation budget spent).
/// The simulation reports it as a runtime failure rather than propagating.
class PolicyFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// FIFO-bounded metadata of recently evicted objects, keyed by id.
class EvictionHistory {
 public:
  explicit EvictionHistory(std::size_t capacity = 4096) : capacity_(capacity) {}

  void record(const EvictionRecord& rec) {
    if (capacity_ == 0) return;
    const std::uint64_t stamp = next_stamp_++;
    live_[rec.id] = Entry{rec, stamp};
    order_.push_back({rec.id, stamp});
    while (live_.size() > capacity_) pop_oldest();
    // Bound the lazy-deletion queue too.
    if (order_.size() > 2 * capacity_ + 16) compact();
  }

  const EvictionRecord* find(ObjectId id) const {
    auto it = live_.find(id);
    return it == live_.end() ? nullptr : &it->second.rec;
  }

  std::optional<EvictionRecord> lookup(ObjectId id) const {
    const auto* r = find(id);
    return r ? std::optional<EvictionRecord>(*r) : std::nullopt;
  }

  void erase(ObjectId id) { live_.erase(id); }

  std::size_t size() const { return live_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  struct Entry {
    EvictionRecord rec;
    std::uint64_t stamp;
  };

  void pop_oldest() {
    while (!order_.empty()) {
      const auto [id, stamp] = order_.front();
      order_.pop_front();
      auto it = live_.find(id);
      if (it != live_.end() && it->second.stamp == stamp) {
        live_.erase(it);
        return;
      }
    }
  }

  void compact() {
    std::deque<std::pair<ObjectId, std::uint64_t>> kept;
    for (const auto& e : order_) {
      auto it = live_.find(e.first);
      if (it != live_.end() && it->second.stamp == e.second) kept.push_back(e);
    }
    order_.swap(kept);
  }

  std::size_t capacity_;
  std::uint64_t next_stamp_ = 0;
  std::unordered_map<ObjectId, Entry> live_;
  std::deque<std::pair<ObjectId, std::uint64_t>> order_;
};

/// Exact order statistics over resident objects. Ages are derived from
/// addition vtimes so the clock advancing needs no per-object updates.
class AggregateStats {
 public:
  void add(const ObjectMeta& m) {
    counts_.insert(m.count, m.seq);
    additions_.insert(m.addition_vtime, m.seq);
    sizes_.insert(static_cast<std::int64_t>(m.size), m.seq);
  }

  void remove(const ObjectMeta& m) {
    counts_.erase(m.count, m.seq);
    additions_.erase(m.addition_vtime, m.seq);
    sizes_.erase(static_cast<std::int64_t>(m.size), m.seq);
  }

  void update_count(const ObjectMeta& m, std::int64_t old_count) {
    counts_.erase(old_count, m.seq);
    counts_.insert(m.count, m.seq);
  }

  void update_size(const ObjectMeta& m, std::uint64_t old_size) {
    sizes_.erase(static_cast<std::int64_t>(old_size), m.seq);
    sizes_.insert(static_cast<std::int64_t>(m.size), m.seq);
  }

  std::size_t size() const { return counts_.size(); }

  /// Nearest-rank percentile at vtime `now`; 0 for an empty cache.
  double percentile(Stat stat, double p, VTime now) const {
    switch (stat) {
      case Stat::counts: return static_cast<double>(counts_.percentile(p));
      case Stat::sizes: return static_cast<double>(sizes_.percentile(p));
      case Stat::ages: {
        const std::size_t n = additions_.size();
        if (n == 0) return 0.0;
        // The k-th smallest age belongs to the k-th largest addition time.
        const std::size_t k = nearest_rank_index(p, n);
        return static_cast<double>(now - additions_.at_rank(n - 1 - k));
      }
    }
    return 0.0;
  }

 private:
  OrderStatMultiset counts_;
  OrderStatMultiset additions_;
  OrderStatMultiset sizes_;
};

/// Residency bookkeeping shared by the simulator and the policy plugged into it.
class CacheState {
 public:
  explicit CacheState(const CacheConfig& cfg) : cfg_(cfg), history_(cfg.history_capacity) {
    if (cfg.capacity == 0) throw std::invalid_argument("cache capacity must be >= 1");
  }

  const CacheConfig& config() const { return cfg_; }
  std::uint64_t capacity() const { return cfg_.capacity; }
  std::uint64_t used() const { return used_; }
  VTime now() const { return now_; }

  std::uint64_t effective_size(std::uint64_t bytes) const {
    return cfg_.mode == CacheMode::size_agnostic ? 1 : bytes;
  }

  bool contains(ObjectId id) const { return objects_.count(id) != 0; }

  const ObjectMeta* find(ObjectId id) const {
    auto it = objects_.find(id);
    return it == objects_.end() ? nullptr : &it->second.meta;
  }

  const ObjectMeta& meta(ObjectId id) const { return objects_.at(id).meta; }

  /// Resident ids in an unspecified but deterministic order.
  std::span<const ObjectId> residents() const { return residents_; }
  std::size_t resident_count() const { return residents_.size(); }

  const AggregateStats& stats() const { return stats_; }
  const EvictionHistory& history() const { return history_; }

  // --- mutation, driven by the simulator ---------------------------------

  void set_now(VTime t) { now_ = t; }

  void insert(ObjectId id, std::uint64_t bytes) {
    Slot s;
    s.meta.count = 1;
    s.meta.last_access_vtime = now_;
    s.meta.addition_vtime = now_;
    s.meta.size = effective_size(bytes);
    s.meta.seq = next_seq_++;
    s.index = residents_.size();
    residents_.push_back(id);
    used_ += s.meta.size;
    stats_.add(s.meta);
    objects_.emplace(id, s);
  }

  /// Applies a hit: count += 1, last access = now, size refreshed.
  void touch(ObjectId id, std::uint64_t bytes) {
    Slot& s = objects_.at(id);
    const std::int64_t old_count = s.meta.count;
    s.meta.count += 1;
    s.meta.last_access_vtime = now_;
    stats_.update_count(s.meta, old_count);
    const std::uint64_t size = effective_size(bytes);
    if (size != s.meta.size) {
      const std::uint64_t old = s.meta.size;
      used_ = used_ - old + size;
      s.meta.size = size;
      stats_.update_size(s.meta, old);
    }
  }

  /// Removes a resident object and records it in the eviction history.
  EvictionRecord evict(ObjectId id) {
    auto it = objects_.find(id);
    if (it == objects_.end()) throw std::logic_error("evicting non-resident object");
    const ObjectMeta m = it->second.meta;
    const std::size_t idx = it->second.index;
    const ObjectId last = residents_.back();
    residents_[idx] = last;
    objects_.at(last).index = idx;
    residents_.pop_back();
    stats_.remove(m);
    used_ -= m.size;
    objects_.erase(it);
    EvictionRecord rec{id, now_, m.count, now_ - m.addition_vtime};
    history_.record(rec);
    return rec;
  }

  void forget_history(ObjectId id) { history_.erase(id); }

 private:
  struct Slot {
    ObjectMeta meta;
    std::size_t index = 0;
  };

  CacheConfig cfg_;
  std::uint64_t used_ = 0;
  VTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::unordered_map<ObjectId, Slot> objects_;
  std::vector<ObjectId> residents_;
  AggregateStats stats_;
  EvictionHistory history_;
};

/// Victim-selection plug-in for the simulator. Victims returned from
/// select_victims must already be detached from the policy's own structures;
/// the simulator then evicts them in order.
class ReplacementPolicy {
 public:
  virtual ~ReplacementPolicy() = default;
  virtual void on_insert(const CacheState& state, ObjectId id) = 0;
  virtual void on_hit(const CacheState& state, ObjectId id) = 0;
  virtual void select_victims(const CacheState& state, std::uint64_t bytes_needed,
                              std::vector<ObjectId>& out) = 0;
};

enum class SimStatus { ok, runtime_fail };

struct SimResult {
  std::string policy;
  SimStatus status = SimStatus::ok;
  std::string error;
  std::uint64_t requests = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t hit_bytes = 0;
  std::uint64_t requested_bytes = 0;
  std::uint64_t evictions = 0;
  double wall_time_ms = 0.0;

  double object_hit_rate() const { return requests ? static_cast<double>(hits) / static_cast<double>(requests) : 0.0; }
  double miss_rate() const { return requests ? static_cast<double>(misses) / static_cast<double>(requests) : 0.0; }
  double byte_hit_rate() const {
    return requested_bytes ? static_cast<double>(hit_bytes) / static_cast<double>(requested_bytes) : 0.0;
  }
  bool ok() const { return status == SimStatus::ok; }

  /// Flat JSON. Wall time is opt-in so persisted results stay reproducible.
  nlohmann::json to_json(bool include_timing = false) const {
    nlohmann::json j = {{"policy", policy},
                        {"status", status == SimStatus::ok ? "ok" : "runtime_fail"},
                        {"requests", requests},
                        {"hits", hits},
                        {"misses", misses},
                        {"object_hit_rate", object_hit_rate()},
                        {"byte_hit_rate", byte_hit_rate()},
                        {"hit_bytes", hit_bytes},
                        {"requested_bytes", requested_bytes},
                        {"evictions", evictions}};
    if (!error.empty()) j["error"] = error;
    if (include_timing) j["wall_time_ms"] = wall_time_ms;
    return j;
  }

  static SimResult from_json(const nlohmann::json& j) {
    SimResult r;
    r.policy = j.value("policy", "");
    r.status = j.value("status", "ok") == "ok" ? SimStatus::ok : SimStatus::runtime_fail;
    r.error = j.value("error", "");
    r.requests = j.at("requests").get<std::uint64_t>();
    r.hits = j.at("hits").get<std::uint64_t>();
    r.misses = j.at("misses").get<std::uint64_t>();
    r.hit_bytes = j.value("hit_bytes", std::uint64_t{0});
    r.requested_bytes = j.value("requested_bytes", std::uint64_t{0});
    r.evictions = j.value("evictions", std::uint64_t{0});
    r.wall_time_ms = j.value("wall_time_ms", 0.0);
    return r;
  }
};

/// Optional per-event callbacks, for tests and tracing.
class SimObserver {
 public:
  virtual ~SimObserver() = default;
  virtual void on_request(const Request&, bool /*hit*/) {}
  virtual void on_evict(const EvictionRecord&) {}
};

/// (miss_fifo - miss_policy) / miss_fifo; 0 when FIFO never misses.
inline double miss_rate_reduction(const SimResult& policy, const SimResult& fifo) {
  const double base = fifo.miss_rate();
  if (base == 0.0) return 0.0;
  return (base - policy.miss_rate()) / base;
}

/// Replays a trace against a victim-selection policy on the shared engine.
inline SimResult simulate(const Trace& trace, ReplacementPolicy& policy, const CacheConfig& cfg,
                          SimObserver* observer = nullptr, CacheState* state_out = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  CacheState local(cfg);
  CacheState& state = state_out ? *state_out : local;
  SimResult res;
  std::vector<ObjectId> victims;

  auto evict_list = [&] {
    for (ObjectId v : victims) {
      const EvictionRecord rec = state.evict(v);
      ++res.evictions;
      if (observer) observer->on_evict(rec);
    }
    victims.clear();
  };

  try {
    for (const Request& req : trace) {
      state.set_now(req.vtime);
      ++res.requests;
      res.requested_bytes += req.size;
      if (state.contains(req.id)) {
        ++res.hits;
        res.hit_bytes += req.size;
        state.touch(req.id, req.size);
        policy.on_hit(state, req.id);
        if (state.used() > state.capacity()) {
          policy.select_victims(state, state.used() - state.capacity(), victims);
          evict_list();
        }
        if (observer) observer->on_request(req, true);
        continue;
      }
      ++res.misses;
      const std::uint64_t size = state.effective_size(req.size);
      if (size > state.capacity()) {
        if (observer) observer->on_request(req, false);
        continue;
      }
      if (state.used() + size > state.capacity()) {
        policy.select_victims(state, state.used() + size - state.capacity(), victims);
        evict_list();
        if (state.used() + size > state.capacity())
          throw std::logic_error("policy freed too little space");
      }
      state.insert(req.id, req.size);
      policy.on_insert(state, req.id);
      state.forget_history(req.id);
      if (observer) observer->on_request(req, false);
    }
  } catch (const PolicyFault& fault) {
    res.status = SimStatus::runtime_fail;
    res.error = fault.what();
  }
  res.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace evictlab

#endif  // EVICTLAB_ENGINE_HPP
