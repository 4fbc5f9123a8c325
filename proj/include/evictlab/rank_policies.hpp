#ifndef EVICTLAB_RANK_POLICIES_HPP
#define EVICTLAB_RANK_POLICIES_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <list>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "evictlab/dsl.hpp"
#include "evictlab/engine.hpp"
#include "evictlab/indexed_pq.hpp"

namespace evictlab {

// ---------------------------------------------------------------------------
// Rank interface: a score program plus a selection mechanism. Lower scores are
// evicted first; ties go to the object inserted earlier.

enum class Mechanism { priority_queue, full_sort, sample_sort };

struct MechanismSpec {
  Mechanism kind = Mechanism::priority_queue;
  std::size_t sample_size = 64;

  std::string to_string() const {
    switch (kind) {
      case Mechanism::priority_queue: return "pq";
      case Mechanism::full_sort: return "fullsort";
      case Mechanism::sample_sort: return "samplesort:" + std::to_string(sample_size);
    }
    return "?";
  }
};

/// Parses "pq", "fullsort" or "samplesort:<S>".
inline MechanismSpec parse_mechanism(const std::string& s) {
  if (s == "pq" || s == "priorityqueue") return {Mechanism::priority_queue, 64};
  if (s == "fullsort") return {Mechanism::full_sort, 64};
  const std::string prefix = "samplesort";
  if (s.rfind(prefix, 0) == 0) {
    std::size_t n = 64;
    if (s.size() > prefix.size()) {
      if (s[prefix.size()] != ':') throw std::invalid_argument("bad mechanism '" + s + "'");
      std::uint64_t v = 0;
      if (!detail::parse_u64(s.substr(prefix.size() + 1), v) || v == 0)
        throw std::invalid_argument("samplesort sample size must be a positive integer");
      n = static_cast<std::size_t>(v);
    }
    return {Mechanism::sample_sort, n};
  }
  throw std::invalid_argument("unknown mechanism '" + s + "'");
}

struct RankPolicySpec {
  std::string name;
  std::shared_ptr<const ScoreProgram> program;
  MechanismSpec mechanism;
};

/// Evaluation hooks that expose the engine's aggregate statistics and the
/// eviction history of the object being scored.
class RankHooks : public dsl::EvalHooks {
 public:
  RankHooks(const CacheState& state, ObjectId id) : state_(state), ghost_(state.history().find(id)) {}

  double percentile(Stat stat, double p) const override { return state_.stats().percentile(stat, p, state_.now()); }
  bool ghost_contains() const override { return ghost_ != nullptr; }
  double ghost_count() const override { return ghost_ ? static_cast<double>(ghost_->count_at_eviction) : 0.0; }
  double ghost_age() const override { return ghost_ ? static_cast<double>(ghost_->age_at_eviction_time) : 0.0; }

 private:
  const CacheState& state_;
  const EvictionRecord* ghost_;
};

/// Scores one resident object with a rank_score program.
inline double score_object(const ScoreProgram& program, const CacheState& state, ObjectId id, double aging) {
  const ObjectMeta& m = state.meta(id);
  const std::array<double, dsl::rank_slot::num> features{
      static_cast<double>(state.now()),         static_cast<double>(m.count),
      static_cast<double>(m.last_access_vtime), static_cast<double>(m.addition_vtime),
      static_cast<double>(m.size),              aging};
  const RankHooks hooks(state, id);
  return program.evaluate({features, &hooks});
}

class RankPolicy : public ReplacementPolicy {
 public:
  RankPolicy(RankPolicySpec spec, const CacheConfig& cfg)
      : spec_(std::move(spec)), rng_(cfg.seed), budget_(cfg.eval_budget) {
    if (!spec_.program) throw std::invalid_argument("rank policy needs a score program");
    if (spec_.program->kind() != ContextKind::rank_score)
      throw std::invalid_argument("rank policy program must be a rank_score program");
    if (spec_.mechanism.kind == Mechanism::sample_sort && spec_.mechanism.sample_size == 0)
      throw std::invalid_argument("samplesort sample size must be >= 1");
  }

  const RankPolicySpec& spec() const { return spec_; }
  double aging() const { return aging_; }

  void on_insert(const CacheState& state, ObjectId id) override {
    if (spec_.mechanism.kind != Mechanism::priority_queue) return;
    pq_.push(id, score(state, id), state.meta(id).seq);
  }

  void on_hit(const CacheState& state, ObjectId id) override {
    if (spec_.mechanism.kind != Mechanism::priority_queue) return;
    pq_.update(id, score(state, id));
  }

  void select_victims(const CacheState& state, std::uint64_t bytes_needed, std::vector<ObjectId>& out) override {
    switch (spec_.mechanism.kind) {
      case Mechanism::priority_queue: {
        std::uint64_t freed = 0;
        while (freed < bytes_needed && !pq_.empty()) {
          const auto e = pq_.pop();
          aging_ = e.priority;
          freed += state.meta(e.id).size;
          out.push_back(e.id);
        }
        return;
      }
      case Mechanism::full_sort: {
        ranked_.clear();
        for (ObjectId id : state.residents()) ranked_.push_back({score(state, id), state.meta(id).seq, id});
        take_prefix(state, bytes_needed, 0, out);
        return;
      }
      case Mechanism::sample_sort: {
        std::uint64_t freed = 0;
        chosen_.clear();
        while (freed < bytes_needed && chosen_.size() < state.resident_count()) {
          sample(state);
          freed += take_prefix(state, bytes_needed - freed, 0, out);
        }
        return;
      }
    }
  }

  /// Ordered (score, seq, id) list from the last FullSort/SampleSort decision.
  struct Ranked {
    double score;
    std::uint64_t seq;
    ObjectId id;
  };

 private:
  double score(const CacheState& state, ObjectId id) {
    if (budget_) {
      spent_ += spec_.program->node_count();
      if (spent_ > budget_) throw PolicyFault("evaluation budget exhausted");
    }
    return score_object(*spec_.program, state, id, aging_);
  }

  std::uint64_t take_prefix(const CacheState& state, std::uint64_t need, std::uint64_t freed,
                            std::vector<ObjectId>& out) {
    std::sort(ranked_.begin(), ranked_.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score < b.score;
      return a.seq < b.seq;
    });
    for (const auto& r : ranked_) {
      if (freed >= need) break;
      aging_ = r.score;
      freed += state.meta(r.id).size;
      out.push_back(r.id);
      chosen_.insert(r.id);
    }
    return freed;
  }

  // Uniformly samples min(S, remaining) residents without replacement,
  // excluding objects already chosen in this decision.
  void sample(const CacheState& state) {
    ranked_.clear();
    const auto residents = state.residents();
    std::vector<ObjectId> pool;
    std::span<const ObjectId> from = residents;
    if (!chosen_.empty()) {
      pool.reserve(residents.size());
      for (ObjectId id : residents)
        if (!chosen_.count(id)) pool.push_back(id);
      from = pool;
    }
    const std::size_t n = from.size();
    const std::size_t s = std::min(spec_.mechanism.sample_size, n);
    if (s == n) {
      for (ObjectId id : from) ranked_.push_back({score(state, id), state.meta(id).seq, id});
      return;
    }
    // Floyd's algorithm.
    picked_.clear();
    for (std::size_t j = n - s; j < n; ++j) {
      const auto t = static_cast<std::size_t>(detail::bounded_rand(rng_, j + 1));
      const std::size_t pick = picked_.count(t) ? j : t;
      picked_.insert(pick);
      const ObjectId id = from[pick];
      ranked_.push_back({score(state, id), state.meta(id).seq, id});
    }
  }

  RankPolicySpec spec_;
  IndexedPriorityQueue<ObjectId> pq_;
  std::mt19937_64 rng_;
  double aging_ = 0.0;
  std::uint64_t budget_ = 0;
  std::uint64_t spent_ = 0;
  std::vector<Ranked> ranked_;
  std::unordered_set<ObjectId> chosen_;
  std::unordered_set<std::size_t> picked_;
};

// ---------------------------------------------------------------------------
// Native queue-based baselines.

namespace detail {

inline std::uint64_t fraction_of(const CacheState& state, double f) {
  const auto v = static_cast<std::uint64_t>(f * static_cast<double>(state.capacity()));
  return std::max<std::uint64_t>(1, v);
}

/// Intrusive-ish list keyed by id; front is the head (newest).
class IdList {
 public:
  bool contains(ObjectId id) const { return index_.count(id) != 0; }
  bool empty() const { return list_.empty(); }
  std::size_t size() const { return list_.size(); }
  ObjectId back() const { return list_.back(); }

  void push_front(ObjectId id) {
    list_.push_front(id);
    index_[id] = list_.begin();
  }
  void erase(ObjectId id) {
    auto it = index_.find(id);
    if (it == index_.end()) return;
    list_.erase(it->second);
    index_.erase(it);
  }
  ObjectId pop_back() {
    const ObjectId id = list_.back();
    index_.erase(id);
    list_.pop_back();
    return id;
  }
  void move_to_front(ObjectId id) {
    auto it = index_.at(id);
    list_.splice(list_.begin(), list_, it);
  }
  std::list<ObjectId>::iterator iter(ObjectId id) const { return index_.at(id); }
  std::list<ObjectId>& items() { return list_; }
  const std::list<ObjectId>& items() const { return list_; }

 private:
  std::list<ObjectId> list_;
  std::unordered_map<ObjectId, std::list<ObjectId>::iterator> index_;
};

/// FIFO of (id, size) with a byte (or slot) bound.
class GhostList {
 public:
  void set_capacity(std::uint64_t cap) { capacity_ = cap; }
  bool contains(ObjectId id) const { return list_.contains(id); }

  void add(ObjectId id, std::uint64_t size) {
    if (capacity_ == 0) return;
    remove(id);
    list_.push_front(id);
    sizes_[id] = size;
    bytes_ += size;
    while (bytes_ > capacity_ && !list_.empty()) remove(list_.back());
  }

  void remove(ObjectId id) {
    auto it = sizes_.find(id);
    if (it == sizes_.end()) return;
    bytes_ -= it->second;
    sizes_.erase(it);
    list_.erase(id);
  }

  std::size_t size() const { return list_.size(); }

 private:
  IdList list_;
  std::unordered_map<ObjectId, std::uint64_t> sizes_;
  std::uint64_t bytes_ = 0;
  std::uint64_t capacity_ = 0;
};

}  // namespace detail

/// FIFO with one-bit reinsertion (CLOCK).
class FifoReinsertionPolicy : public ReplacementPolicy {
 public:
  void on_insert(const CacheState&, ObjectId id) override {
    queue_.push_front(id);
    visited_[id] = false;
  }
  void on_hit(const CacheState&, ObjectId id) override { visited_[id] = true; }
  void select_victims(const CacheState& state, std::uint64_t need, std::vector<ObjectId>& out) override {
    std::uint64_t freed = 0;
    while (freed < need && !queue_.empty()) {
      const ObjectId t = queue_.back();
      if (visited_[t]) {
        visited_[t] = false;
        queue_.move_to_front(t);
        continue;
      }
      queue_.pop_back();
      visited_.erase(t);
      freed += state.meta(t).size;
      out.push_back(t);
    }
  }

 private:
  detail::IdList queue_;
  std::unordered_map<ObjectId, bool> visited_;
};

/// SIEVE: FIFO order with a hand sweeping from tail to head; visited objects
/// are skipped (bit cleared) without moving.
class SievePolicy : public ReplacementPolicy {
 public:
  void on_insert(const CacheState&, ObjectId id) override {
    queue_.push_front(id);
    visited_[id] = false;
  }
  void on_hit(const CacheState&, ObjectId id) override { visited_[id] = true; }
  void select_victims(const CacheState& state, std::uint64_t need, std::vector<ObjectId>& out) override {
    std::uint64_t freed = 0;
    auto& items = queue_.items();
    while (freed < need && !items.empty()) {
      auto it = hand_valid_ ? hand_ : std::prev(items.end());
      while (visited_[*it]) {
        visited_[*it] = false;
        it = it == items.begin() ? std::prev(items.end()) : std::prev(it);
      }
      const ObjectId victim = *it;
      if (it == items.begin()) {
        hand_valid_ = false;
      } else {
        hand_ = std::prev(it);
        hand_valid_ = true;
      }
      queue_.erase(victim);
      visited_.erase(victim);
      freed += state.meta(victim).size;
      out.push_back(victim);
    }
  }

 private:
  detail::IdList queue_;
  std::unordered_map<ObjectId, bool> visited_;
  std::list<ObjectId>::iterator hand_{};
  bool hand_valid_ = false;
};

/// S3-FIFO: small FIFO (10%), main FIFO (90%) with 2-bit frequency
/// reinsertion, and a ghost FIFO sized like main. Objects accessed while in
/// small move to main (frequency reset); ghost hits insert straight into main.
class S3FifoPolicy : public ReplacementPolicy {
 public:
  explicit S3FifoPolicy(double small_fraction = 0.1) : small_fraction_(small_fraction) {}

  void on_insert(const CacheState& state, ObjectId id) override {
    init(state);
    const std::uint64_t size = state.meta(id).size;
    freq_[id] = 0;
    if (ghost_.contains(id)) {
      ghost_.remove(id);
      main_.push_front(id);
      main_bytes_ += size;
    } else {
      small_.push_front(id);
      small_bytes_ += size;
    }
    sizes_[id] = size;
  }

  void on_hit(const CacheState& state, ObjectId id) override {
    auto& f = freq_[id];
    f = std::min(f + 1, 3);
    const std::uint64_t size = state.meta(id).size;
    auto& old = sizes_[id];
    if (old != size) {
      (small_.contains(id) ? small_bytes_ : main_bytes_) += size - old;
      old = size;
    }
  }

  void select_victims(const CacheState&, std::uint64_t need, std::vector<ObjectId>& out) override {
    std::uint64_t freed = 0;
    while (freed < need && (!small_.empty() || !main_.empty())) evict_one(out, freed);
  }

 private:
  void init(const CacheState& state) {
    if (small_target_) return;
    small_target_ = detail::fraction_of(state, small_fraction_);
    main_target_ = state.capacity() > small_target_ ? state.capacity() - small_target_ : 1;
    ghost_.set_capacity(main_target_);
  }

  void drop(ObjectId v, std::vector<ObjectId>& out, std::uint64_t& freed) {
    freed += sizes_[v];
    sizes_.erase(v);
    freq_.erase(v);
    out.push_back(v);
  }

  // Small is evicted while it holds at least its target share (or main is
  // empty). Promotions that overfill main evict from main right away, and
  // that eviction counts as this round's victim.
  void evict_one(std::vector<ObjectId>& out, std::uint64_t& freed) {
    const std::size_t before = out.size();
    if (small_bytes_ >= small_target_ || main_.empty()) {
      while (!small_.empty()) {
        const ObjectId t = small_.pop_back();
        const std::uint64_t size = sizes_[t];
        small_bytes_ -= size;
        if (freq_[t] >= 1) {
          freq_[t] = 0;
          main_.push_front(t);
          main_bytes_ += size;
          if (main_bytes_ > main_target_) evict_main(out, freed);
        } else {
          ghost_.add(t, size);
          drop(t, out, freed);
          return;
        }
      }
    }
    if (out.size() == before && !main_.empty()) evict_main(out, freed);
  }

  void evict_main(std::vector<ObjectId>& out, std::uint64_t& freed) {
    for (;;) {
      const ObjectId t = main_.back();
      auto& f = freq_[t];
      if (f > 0) {
        --f;
        main_.move_to_front(t);
      } else {
        main_.pop_back();
        main_bytes_ -= sizes_[t];
        drop(t, out, freed);
        return;
      }
    }
  }

  double small_fraction_;
  std::uint64_t small_target_ = 0;
  std::uint64_t main_target_ = 0;
  detail::IdList small_;
  detail::IdList main_;
  detail::GhostList ghost_;
  std::uint64_t small_bytes_ = 0;
  std::uint64_t main_bytes_ = 0;
  std::unordered_map<ObjectId, int> freq_;
  std::unordered_map<ObjectId, std::uint64_t> sizes_;
};

/// Full 2Q: A1in FIFO (25%), A1out ghost (50%), Am LRU.
class TwoQPolicy : public ReplacementPolicy {
 public:
  void on_insert(const CacheState& state, ObjectId id) override {
    if (!kin_) {
      kin_ = detail::fraction_of(state, 0.25);
      ghost_.set_capacity(detail::fraction_of(state, 0.5));
    }
    const std::uint64_t size = state.meta(id).size;
    sizes_[id] = size;
    if (ghost_.contains(id)) {
      ghost_.remove(id);
      am_.push_front(id);
    } else {
      a1in_.push_front(id);
      a1in_bytes_ += size;
    }
  }

  void on_hit(const CacheState& state, ObjectId id) override {
    const std::uint64_t size = state.meta(id).size;
    auto& old = sizes_[id];
    if (a1in_.contains(id)) a1in_bytes_ = a1in_bytes_ - old + size;
    old = size;
    if (am_.contains(id)) am_.move_to_front(id);
  }

  void select_victims(const CacheState&, std::uint64_t need, std::vector<ObjectId>& out) override {
    std::uint64_t freed = 0;
    while (freed < need && (!a1in_.empty() || !am_.empty())) {
      ObjectId v;
      if (a1in_bytes_ > kin_ || am_.empty()) {
        v = a1in_.pop_back();
        a1in_bytes_ -= sizes_[v];
        ghost_.add(v, sizes_[v]);
      } else {
        v = am_.pop_back();
      }
      freed += sizes_[v];
      sizes_.erase(v);
      out.push_back(v);
    }
  }

 private:
  std::uint64_t kin_ = 0;
  detail::IdList a1in_;
  detail::IdList am_;
  detail::GhostList ghost_;
  std::uint64_t a1in_bytes_ = 0;
  std::unordered_map<ObjectId, std::uint64_t> sizes_;
};

// ---------------------------------------------------------------------------
// Builtin catalogue

/// Score programs of the rank-expressible builtins.
inline const std::vector<std::pair<std::string, std::string>>& builtin_rank_sources() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"fifo", "obj.addition_vtime"},
      {"lru", "vtime"},
      {"mru", "-vtime"},
      {"lfu", "obj.count"},
      {"gdsf", "obj.count / obj.size + L_aging"},
  };
  return table;
}

inline const std::vector<std::string>& builtin_native_names() {
  static const std::vector<std::string> names = {"fifo_reinsertion", "sieve", "s3fifo", "twoq"};
  return names;
}

inline std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& [n, s] : builtin_rank_sources()) out.push_back(n);
  for (const auto& n : builtin_native_names()) out.push_back(n);
  return out;
}

inline bool is_builtin_rank(const std::string& name) {
  for (const auto& [n, s] : builtin_rank_sources())
    if (n == name) return true;
  return false;
}

inline bool is_builtin_native(const std::string& name) {
  const auto& names = builtin_native_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

inline RankPolicySpec builtin_rank(const std::string& name, MechanismSpec mech = {}) {
  for (const auto& [n, src] : builtin_rank_sources())
    if (n == name)
      return {n, std::make_shared<const ScoreProgram>(parse_program(src, ContextKind::rank_score)), mech};
  throw std::invalid_argument("unknown builtin rank policy '" + name + "'");
}

inline std::unique_ptr<ReplacementPolicy> make_native_policy(const std::string& name) {
  if (name == "fifo_reinsertion") return std::make_unique<FifoReinsertionPolicy>();
  if (name == "sieve") return std::make_unique<SievePolicy>();
  if (name == "s3fifo") return std::make_unique<S3FifoPolicy>();
  if (name == "twoq") return std::make_unique<TwoQPolicy>();
  throw std::invalid_argument("unknown native policy '" + name + "'");
}

}  // namespace evictlab

#endif  // EVICTLAB_RANK_POLICIES_HPP
