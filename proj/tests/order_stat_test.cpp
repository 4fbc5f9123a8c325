#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "evictlab/order_stat.hpp"

using namespace evictlab;

namespace {

std::int64_t sorted_percentile(std::vector<std::int64_t> v, double p) {
  std::sort(v.begin(), v.end());
  const auto r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  return v[r == 0 ? 0 : std::min(r, v.size()) - 1];
}

}  // namespace

TEST(NearestRank, Endpoints) {
  EXPECT_EQ(nearest_rank_index(0.0, 10), 0u);
  EXPECT_EQ(nearest_rank_index(1.0, 10), 9u);
  EXPECT_EQ(nearest_rank_index(0.5, 10), 4u);
  EXPECT_EQ(nearest_rank_index(0.51, 10), 5u);
  EXPECT_EQ(nearest_rank_index(0.75, 4), 2u);
  EXPECT_EQ(nearest_rank_index(-1.0, 4), 0u);
  EXPECT_EQ(nearest_rank_index(7.0, 4), 3u);
  EXPECT_EQ(nearest_rank_index(0.3, 0), 0u);
}

TEST(OrderStatMultiset, MatchesSortOracleUnderChurn) {
  std::mt19937_64 rng(1);
  OrderStatMultiset set;
  std::vector<std::pair<std::int64_t, std::uint64_t>> live;
  std::uint64_t handle = 0;
  for (int step = 0; step < 20'000; ++step) {
    if (live.empty() || rng() % 3 != 0) {
      const auto v = static_cast<std::int64_t>(rng() % 50);  // many duplicates
      set.insert(v, handle);
      live.push_back({v, handle++});
    } else {
      const std::size_t i = rng() % live.size();
      set.erase(live[i].first, live[i].second);
      live[i] = live.back();
      live.pop_back();
    }
    ASSERT_EQ(set.size(), live.size());
    if (step % 97 == 0 && !live.empty()) {
      std::vector<std::int64_t> vals;
      for (const auto& [v, h] : live) vals.push_back(v);
      for (double p : {0.0, 0.1, 0.25, 0.5, 0.7, 0.75, 0.9, 0.99, 1.0})
        ASSERT_EQ(set.percentile(p), sorted_percentile(vals, p)) << "p=" << p;
    }
  }
}

TEST(OrderStatMultiset, EmptyPercentileIsZero) {
  OrderStatMultiset s;
  EXPECT_EQ(s.percentile(0.5), 0);
}
