#ifndef EVICTLAB_TOPOLOGY_HPP
#define EVICTLAB_TOPOLOGY_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "evictlab/dsl.hpp"
#include "evictlab/engine.hpp"

namespace evictlab {

enum class QueueType { fifo, lru };

inline constexpr int kToGhost = -1;
inline constexpr int kToTrash = -2;
inline constexpr std::size_t kMaxQueues = 5;

/// A queue-topology cache: up to five FIFO/LRU queues plus a ghost FIFO, with
/// a placement program for new objects and one transition program per queue
/// deciding where that queue's displaced tail goes.
struct Topology {
  std::vector<QueueType> queue_types;
  std::vector<double> queue_fractions;
  double ghost_fraction = 0.0;
  std::uint64_t max_transitions_allowed = 0;
  ScoreProgram init_program;
  std::vector<ScoreProgram> transition_programs;

  std::size_t num_queues() const { return queue_types.size(); }

  /// Throws std::invalid_argument on any structural violation.
  void check() const {
    const std::size_t m = num_queues();
    if (m < 1 || m > kMaxQueues) throw std::invalid_argument("topology needs 1..5 queues");
    if (queue_fractions.size() != m || transition_programs.size() != m)
      throw std::invalid_argument("queue_types, queue_fractions and transition_programs must have equal length");
    double sum = 0.0;
    for (double f : queue_fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("queue fractions must lie in (0, 1]");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("queue fractions must sum to 1");
    if (!(ghost_fraction >= 0.0 && ghost_fraction <= 1.0))
      throw std::invalid_argument("ghost fraction must lie in [0, 1]");
    if (init_program.kind() != ContextKind::qt_init) throw std::invalid_argument("init program must be qt_init");
    for (const auto& p : transition_programs)
      if (p.kind() != ContextKind::qt_transition)
        throw std::invalid_argument("transition programs must be qt_transition");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_queues"] = num_queues();
    j["queue_types"] = nlohmann::json::array();
    for (auto t : queue_types) j["queue_types"].push_back(t == QueueType::fifo ? "FIFO" : "LRU");
    j["queue_fractions"] = queue_fractions;
    j["ghost_fraction"] = ghost_fraction;
    j["max_transitions_allowed"] = max_transitions_allowed;
    j["init_program"] = init_program.canonical();
    j["transition_programs"] = nlohmann::json::array();
    for (const auto& p : transition_programs) j["transition_programs"].push_back(p.canonical());
    return j;
  }

  /// Parses and validates. Program errors surface as dsl::DslError, structural
  /// errors as std::invalid_argument.
  static Topology from_json(const nlohmann::json& j) {
    Topology t;
    for (const auto& s : j.at("queue_types")) {
      const auto v = s.get<std::string>();
      if (v == "FIFO" || v == "fifo")
        t.queue_types.push_back(QueueType::fifo);
      else if (v == "LRU" || v == "lru")
        t.queue_types.push_back(QueueType::lru);
      else
        throw std::invalid_argument("unknown queue type '" + v + "'");
    }
    if (j.contains("num_queues") && j.at("num_queues").get<std::size_t>() != t.queue_types.size())
      throw std::invalid_argument("num_queues does not match queue_types");
    t.queue_fractions = j.at("queue_fractions").get<std::vector<double>>();
    t.ghost_fraction = j.value("ghost_fraction", 0.0);
    t.max_transitions_allowed = j.value("max_transitions_allowed", std::uint64_t{0});
    const std::size_t m = t.queue_types.size();
    if (m < 1 || m > kMaxQueues) throw std::invalid_argument("topology needs 1..5 queues");
    t.init_program = parse_program(j.at("init_program").get<std::string>(), ContextKind::qt_init, m);
    for (const auto& s : j.at("transition_programs"))
      t.transition_programs.push_back(parse_program(s.get<std::string>(), ContextKind::qt_transition, m));
    t.check();
    return t;
  }

  static Topology load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open topology '" + path + "'");
    return from_json(nlohmann::json::parse(in));
  }
};

/// Per-object routing features. Survives ghost residence.
struct QtObjInfo {
  std::int64_t cache_access_count = 0;
  std::int64_t queue_access_count = 0;
  VTime cache_insertion_vtime = 0;
  VTime queue_insertion_vtime = 0;
  VTime last_access_vtime = 0;
  int current_queue = 0;
};

/// Slot capacity per queue: max(1, floor(fraction * L)); if the minimum-one
/// rule overshoots L the largest queues give back slots.
inline std::vector<std::uint64_t> queue_capacities(std::span<const double> fractions, std::uint64_t slots) {
  if (slots < fractions.size())
    throw std::invalid_argument("topology capacity must be at least one slot per queue");
  std::vector<std::uint64_t> caps;
  std::uint64_t sum = 0;
  for (double f : fractions) {
    const auto c = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(f * static_cast<double>(slots))));
    caps.push_back(c);
    sum += c;
  }
  while (sum > slots) {
    auto it = std::max_element(caps.begin(), caps.end());
    --*it;
    --sum;
  }
  return caps;
}

namespace detail {

class FullHooks : public dsl::EvalHooks {
 public:
  explicit FullHooks(std::span<const bool> full) : full_(full) {}
  bool is_full(std::int64_t q) const override {
    return q >= 0 && static_cast<std::size_t>(q) < full_.size() && full_[static_cast<std::size_t>(q)];
  }

 private:
  std::span<const bool> full_;
};

inline int round_to_int(double v) {
  const double r = std::round(v);
  if (r > 1e6) return 1'000'000;
  if (r < -1e6) return -1'000'000;
  return static_cast<int>(r);
}

}  // namespace detail

/// Evaluates the placement program: rounded, clamped to [0, M-1].
inline int initial_placement(const Topology& t, bool in_ghost, std::uint64_t obj_size, std::span<const bool> is_full,
                             VTime now = 0) {
  const std::array<double, dsl::init_slot::num> f{static_cast<double>(now), in_ghost ? 1.0 : 0.0,
                                                  static_cast<double>(obj_size),
                                                  static_cast<double>(t.num_queues())};
  const detail::FullHooks hooks(is_full);
  const int q = detail::round_to_int(t.init_program.evaluate({f, &hooks}));
  return std::clamp(q, 0, static_cast<int>(t.num_queues()) - 1);
}

/// Evaluates queue q's transition program for its displaced tail. Returns a
/// queue index, kToGhost, or kToTrash; anything else coerces to kToGhost.
inline int transition(const Topology& t, std::size_t q, const QtObjInfo& obj, VTime now) {
  const std::array<double, dsl::trans_slot::num> f{
      static_cast<double>(now),
      static_cast<double>(obj.cache_access_count),
      static_cast<double>(obj.queue_access_count),
      static_cast<double>(obj.cache_insertion_vtime),
      static_cast<double>(obj.queue_insertion_vtime),
      static_cast<double>(obj.last_access_vtime),
      static_cast<double>(obj.current_queue),
      static_cast<double>(t.num_queues())};
  const int d = detail::round_to_int(t.transition_programs.at(q).evaluate({f, nullptr}));
  if (d == kToTrash) return kToTrash;
  if (d >= 0 && d < static_cast<int>(t.num_queues())) return d;
  return kToGhost;
}

/// Size-agnostic cache driven by a Topology.
class TopologyCache {
 public:
  TopologyCache(Topology topo, std::uint64_t slots, std::uint64_t eval_budget = 0)
      : topo_(std::move(topo)), budget_(eval_budget) {
    topo_.check();
    caps_ = queue_capacities(topo_.queue_fractions, slots);
    ghost_cap_ = static_cast<std::uint64_t>(std::floor(topo_.ghost_fraction * static_cast<double>(slots)));
    queues_.resize(topo_.num_queues());
  }

  const Topology& topology() const { return topo_; }
  std::span<const std::uint64_t> capacities() const { return caps_; }
  std::uint64_t ghost_capacity() const { return ghost_cap_; }
  std::size_t ghost_size() const { return ghost_.size(); }
  bool in_ghost(ObjectId id) const { return ghost_index_.count(id) != 0; }
  std::size_t resident_count() const { return where_.size(); }
  std::uint64_t evictions() const { return evictions_; }
  /// Transition programs evaluated while serving the most recent request.
  std::uint64_t last_transition_evals() const { return last_evals_; }
  /// Resident-queue moves made while serving the most recent request.
  std::uint64_t last_moves() const { return last_moves_; }

  /// Queue contents from head (newest) to tail.
  std::vector<ObjectId> queue_contents(std::size_t q) const { return {queues_[q].begin(), queues_[q].end()}; }

  const QtObjInfo* info(ObjectId id) const {
    auto it = where_.find(id);
    return it == where_.end() ? nullptr : &it->second.info;
  }

  /// Serves one request; returns true on a hit.
  bool access(const Request& req, SimObserver* observer = nullptr) {
    now_ = req.vtime;
    last_evals_ = 0;
    last_moves_ = 0;
    auto it = where_.find(req.id);
    if (it != where_.end()) {
      Resident& r = it->second;
      ++r.info.cache_access_count;
      ++r.info.queue_access_count;
      r.info.last_access_vtime = now_;
      const auto q = static_cast<std::size_t>(r.info.current_queue);
      if (topo_.queue_types[q] == QueueType::lru) queues_[q].splice(queues_[q].begin(), queues_[q], r.pos);
      return true;
    }

    QtObjInfo info;
    const bool resurrected = take_from_ghost(req.id, info);
    if (resurrected) {
      ++info.cache_access_count;
    } else {
      info.cache_access_count = 0;
      info.cache_insertion_vtime = now_;
    }
    info.last_access_vtime = now_;

    bool full[kMaxQueues] = {};
    for (std::size_t q = 0; q < queues_.size(); ++q) full[q] = queues_[q].size() >= caps_[q];
    charge(topo_.init_program);
    const int q0 = initial_placement(topo_, resurrected, req.size, std::span<const bool>(full, queues_.size()), now_);
    cascade(req.id, info, q0, observer);
    return false;
  }

 private:
  struct Resident {
    QtObjInfo info;
    std::list<ObjectId>::iterator pos;
  };

  struct GhostEntry {
    QtObjInfo info;
    std::list<ObjectId>::iterator pos;
  };

  void charge(const ScoreProgram& p) {
    if (!budget_) return;
    spent_ += p.node_count();
    if (spent_ > budget_) throw PolicyFault("evaluation budget exhausted");
  }

  bool take_from_ghost(ObjectId id, QtObjInfo& out) {
    auto it = ghost_index_.find(id);
    if (it == ghost_index_.end()) return false;
    out = it->second.info;
    ghost_.erase(it->second.pos);
    ghost_index_.erase(it);
    return true;
  }

  void push_ghost(ObjectId id, const QtObjInfo& info) {
    if (ghost_cap_ == 0) return;
    ghost_.push_front(id);
    ghost_index_[id] = GhostEntry{info, ghost_.begin()};
    while (ghost_.size() > ghost_cap_) {
      ghost_index_.erase(ghost_.back());
      ghost_.pop_back();
    }
  }

  // Places id at the head of queue q, handling the chain of displaced tails.
  void cascade(ObjectId id, QtObjInfo info, int q, SimObserver* observer) {
    std::uint64_t budget = topo_.max_transitions_allowed;
    for (;;) {
      auto& queue = queues_[static_cast<std::size_t>(q)];
      info.current_queue = q;
      info.queue_access_count = 0;
      info.queue_insertion_vtime = now_;

      bool displaced = false;
      ObjectId tail_id = 0;
      QtObjInfo tail_info;
      if (queue.size() >= caps_[static_cast<std::size_t>(q)]) {
        tail_id = queue.back();
        tail_info = where_.at(tail_id).info;
        queue.pop_back();
        where_.erase(tail_id);
        displaced = true;
      }
      queue.push_front(id);
      where_[id] = Resident{info, queue.begin()};
      if (!displaced) return;

      int dest = kToGhost;
      if (budget > 0) {
        charge(topo_.transition_programs[static_cast<std::size_t>(tail_info.current_queue)]);
        ++last_evals_;
        dest = transition(topo_, static_cast<std::size_t>(tail_info.current_queue), tail_info, now_);
      }
      if (dest >= 0) {
        --budget;
        ++last_moves_;
        id = tail_id;
        info = tail_info;
        q = dest;
        continue;
      }
      ++evictions_;
      if (observer) {
        observer->on_evict(EvictionRecord{tail_id, now_, tail_info.cache_access_count,
                                          now_ - tail_info.cache_insertion_vtime});
      }
      if (dest == kToGhost) push_ghost(tail_id, tail_info);
      return;
    }
  }

  Topology topo_;
  std::vector<std::uint64_t> caps_;
  std::uint64_t ghost_cap_ = 0;
  std::vector<std::list<ObjectId>> queues_;
  std::unordered_map<ObjectId, Resident> where_;
  std::list<ObjectId> ghost_;
  std::unordered_map<ObjectId, GhostEntry> ghost_index_;
  VTime now_ = 0;
  std::uint64_t evictions_ = 0;
  std::uint64_t last_evals_ = 0;
  std::uint64_t last_moves_ = 0;
  std::uint64_t budget_ = 0;
  std::uint64_t spent_ = 0;
};

/// Replays a trace through a topology cache. Capacity is in object slots.
inline SimResult simulate_topology(const Trace& trace, const Topology& topo, const CacheConfig& cfg,
                                   SimObserver* observer = nullptr) {
  if (cfg.mode != CacheMode::size_agnostic)
    throw std::invalid_argument("queue-topology caches are size-agnostic; use slot capacity");
  const auto t0 = std::chrono::steady_clock::now();
  SimResult res;
  try {
    TopologyCache cache(topo, cfg.capacity, cfg.eval_budget);
    for (const Request& req : trace) {
      ++res.requests;
      res.requested_bytes += req.size;
      const bool hit = cache.access(req, observer);
      if (hit) {
        ++res.hits;
        res.hit_bytes += req.size;
      } else {
        ++res.misses;
      }
      if (observer) observer->on_request(req, hit);
    }
    res.evictions = cache.evictions();
  } catch (const PolicyFault& fault) {
    res.status = SimStatus::runtime_fail;
    res.error = fault.what();
  }
  res.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace evictlab

#endif  // EVICTLAB_TOPOLOGY_HPP
