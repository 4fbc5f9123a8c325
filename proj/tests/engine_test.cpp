#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "evictlab/simulate.hpp"
#include "support.hpp"

using namespace evictlab;
using test_support::RefKind;
using test_support::Recorder;

namespace {

Trace mixed_trace(std::uint64_t seed) {
  return generate_phase_trace({{ZipfSpec{400, 0.9, LognormalSize{4, 1}, 0}, 3000},
                               {ScanSpec{ConstantSize{60}, 1'000'000}, 500},
                               {LoopSpec{150, ConstantSize{40}, 2'000'000}, 1500}},
                              seed);
}

Recorder engine_run(const Trace& t, const std::string& builtin, const CacheConfig& cfg) {
  Recorder rec;
  run_simulation(t, builtin_policy(builtin), cfg, &rec);
  return rec;
}

}  // namespace

class ReferenceEquivalence : public ::testing::TestWithParam<std::tuple<std::string, bool>> {};

TEST_P(ReferenceEquivalence, HitMissAndEvictionSequencesMatch) {
  const auto& [name, agnostic] = GetParam();
  const RefKind kind = name == "lru" ? RefKind::lru : name == "fifo" ? RefKind::fifo : RefKind::lfu;
  for (std::uint64_t seed : {1u, 2u}) {
    const Trace t = mixed_trace(seed);
    const std::uint64_t fp = footprint(t, agnostic);
    for (double frac : {0.02, 0.1, 0.4}) {
      CacheConfig cfg;
      cfg.mode = agnostic ? CacheMode::size_agnostic : CacheMode::size_aware;
      cfg.capacity = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(frac * static_cast<double>(fp)));
      const Recorder want = test_support::reference_run(t, kind, cfg.capacity, agnostic);
      const Recorder got = engine_run(t, name, cfg);
      ASSERT_EQ(got.hits, want.hits) << name << " frac=" << frac;
      ASSERT_EQ(got.evicted, want.evicted) << name << " frac=" << frac;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Builtins, ReferenceEquivalence,
                         ::testing::Combine(::testing::Values("lru", "fifo", "lfu"), ::testing::Bool()));

TEST(Engine, OversizedObjectsBypassTheCache) {
  const Trace t = {{0, 1, 10}, {1, 2, 500}, {2, 1, 10}, {3, 2, 500}};
  CacheConfig cfg;
  cfg.capacity = 100;
  Recorder rec;
  const SimResult r = run_simulation(t, builtin_policy("lru"), cfg, &rec);
  EXPECT_EQ(rec.hits, (std::vector<bool>{false, false, true, false}));
  EXPECT_EQ(r.evictions, 0u);
  EXPECT_EQ(r.hit_bytes, 10u);
  EXPECT_EQ(r.requested_bytes, 1020u);
  EXPECT_DOUBLE_EQ(r.byte_hit_rate(), 10.0 / 1020.0);
}

TEST(Engine, ZeroCapacityIsRejected) {
  CacheConfig cfg;
  cfg.capacity = 0;
  EXPECT_THROW(CacheState{cfg}, std::invalid_argument);
}

TEST(Engine, EvictionRecordCarriesCountAndAge) {
  // Capacity 2 slots; LRU evicts object 1 at vtime 3 after two accesses.
  const Trace t = {{0, 1, 1}, {1, 1, 1}, {2, 2, 1}, {3, 3, 1}};
  CacheConfig cfg;
  cfg.capacity = 2;
  cfg.mode = CacheMode::size_agnostic;
  struct Obs : SimObserver {
    std::vector<EvictionRecord> recs;
    void on_evict(const EvictionRecord& r) override { recs.push_back(r); }
  } obs;
  run_simulation(t, builtin_policy("lru"), cfg, &obs);
  ASSERT_EQ(obs.recs.size(), 1u);
  EXPECT_EQ(obs.recs[0], (EvictionRecord{1, 3, 2, 3}));
}

TEST(EvictionHistory, FifoBoundedAndReRecordRefreshes) {
  EvictionHistory h(3);
  for (ObjectId id = 1; id <= 3; ++id) h.record({id, static_cast<VTime>(id), 1, 0});
  h.record({1, 10, 5, 2});  // refresh moves 1 to the back
  h.record({4, 11, 1, 0});  // displaces 2, the oldest live entry
  EXPECT_EQ(h.size(), 3u);
  EXPECT_EQ(h.find(2), nullptr);
  ASSERT_NE(h.find(1), nullptr);
  EXPECT_EQ(h.find(1)->count_at_eviction, 5);
  h.erase(3);
  EXPECT_FALSE(h.lookup(3).has_value());
  for (ObjectId id = 100; id < 1000; ++id) h.record({id, 0, 1, 0});
  EXPECT_EQ(h.size(), 3u);
  EXPECT_NE(h.find(999), nullptr);
}

TEST(EvictionHistory, VisibleToFirstScoreThenDropped) {
  // Program leaks ghost_count into the score; a one-slot LRU-like cache makes
  // every miss evict the previous object.
  const auto prog = std::make_shared<const ScoreProgram>(
      parse_program("if ghost_contains() then 1000 + ghost_count() else vtime", ContextKind::rank_score));
  CacheConfig cfg;
  cfg.capacity = 2;
  cfg.mode = CacheMode::size_agnostic;
  CacheState state(cfg);
  RankPolicy pol({"probe", prog, {}}, cfg);
  const Trace t = {{0, 1, 1}, {1, 1, 1}, {2, 2, 1}, {3, 3, 1}, {4, 1, 1}};
  simulate(t, pol, cfg, nullptr, &state);
  // Object 1 was evicted with count 2 and re-inserted at vtime 4.
  EXPECT_EQ(state.history().find(1), nullptr);
  EXPECT_NE(state.history().find(2), nullptr);
  EXPECT_DOUBLE_EQ(score_object(*prog, state, 1, 0), 4.0);
}

TEST(Engine, EvalBudgetExhaustionIsARuntimeFailure) {
  CacheConfig cfg;
  cfg.capacity = 10;
  cfg.mode = CacheMode::size_agnostic;
  cfg.eval_budget = 50;
  const Trace t = generate_zipf_trace(100, 1000, 0.5, ConstantSize{1}, 1);
  const SimResult r = run_simulation(t, builtin_policy("gdsf"), cfg);
  EXPECT_EQ(r.status, SimStatus::runtime_fail);
  EXPECT_FALSE(r.error.empty());
  EXPECT_LT(r.requests, t.size());
}

TEST(SimResult, JsonRoundTripAndRates) {
  SimResult r;
  r.policy = "x";
  r.requests = 10;
  r.hits = 4;
  r.misses = 6;
  r.hit_bytes = 40;
  r.requested_bytes = 100;
  r.evictions = 3;
  const SimResult back = SimResult::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_DOUBLE_EQ(r.object_hit_rate(), 0.4);
  EXPECT_DOUBLE_EQ(r.miss_rate(), 0.6);
  EXPECT_FALSE(r.to_json().contains("wall_time_ms"));
  EXPECT_TRUE(r.to_json(true).contains("wall_time_ms"));
}

TEST(Mrr, IdentitiesAndSign) {
  SimResult fifo, better, worse, perfect;
  fifo.requests = better.requests = worse.requests = perfect.requests = 100;
  fifo.misses = 50;
  better.misses = 40;
  worse.misses = 60;
  EXPECT_EQ(miss_rate_reduction(fifo, fifo), 0.0);
  EXPECT_DOUBLE_EQ(miss_rate_reduction(better, fifo), 0.2);
  EXPECT_DOUBLE_EQ(miss_rate_reduction(worse, fifo), -0.2);
  EXPECT_EQ(miss_rate_reduction(worse, perfect), 0.0);
}

TEST(AggregateStats, PercentilesMatchFullSortDuringReplay) {
  const Trace t = mixed_trace(7);
  CacheConfig cfg;
  cfg.capacity = 20'000;
  CacheState state(cfg);
  struct Checker : SimObserver {
    const CacheState* st = nullptr;
    std::mt19937_64 rng{3};
    int checks = 0;
    void on_request(const Request&, bool) override {
      if (rng() % 20 != 0 || st->resident_count() == 0) return;
      std::vector<double> counts, ages, sizes;
      for (ObjectId id : st->residents()) {
        const ObjectMeta& m = st->meta(id);
        counts.push_back(static_cast<double>(m.count));
        ages.push_back(static_cast<double>(st->now() - m.addition_vtime));
        sizes.push_back(static_cast<double>(m.size));
      }
      for (auto* v : {&counts, &ages, &sizes}) std::sort(v->begin(), v->end());
      const double p = static_cast<double>(rng() % 1001) / 1000.0;
      const std::size_t n = counts.size();
      std::size_t r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
      r = r == 0 ? 0 : std::min(r, n) - 1;
      EXPECT_EQ(st->stats().percentile(Stat::counts, p, st->now()), counts[r]);
      EXPECT_EQ(st->stats().percentile(Stat::ages, p, st->now()), ages[r]);
      EXPECT_EQ(st->stats().percentile(Stat::sizes, p, st->now()), sizes[r]);
      ++checks;
    }
  } chk;
  chk.st = &state;
  RankPolicy pol(builtin_rank("lfu"), cfg);
  simulate(t, pol, cfg, &chk, &state);
  EXPECT_GT(chk.checks, 100);
}
