#ifndef EVICTLAB_ORDER_STAT_HPP
#define EVICTLAB_ORDER_STAT_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>

#include <ext/pb_ds/assoc_container.hpp>
#include <ext/pb_ds/tree_policy.hpp>

namespace evictlab {

/// Nearest-rank index for percentile p over n sorted values: ceil(p * n) - 1,
/// clamped to [0, n - 1]. p = 0 selects the minimum, p = 1 the maximum.
inline std::size_t nearest_rank_index(double p, std::size_t n) {
  if (n == 0) return 0;
  if (!(p > 0.0)) return 0;
  if (p >= 1.0) return n - 1;
  const double r = std::ceil(p * static_cast<double>(n));
  if (r <= 1.0) return 0;
  const auto idx = static_cast<std::size_t>(r) - 1;
  return idx >= n ? n - 1 : idx;
}

/// Exact multiset with O(log n) insert/erase and rank queries. Duplicate values
/// are disambiguated by a caller-supplied handle that must be unique per entry.
class OrderStatMultiset {
 public:
  using Key = std::pair<std::int64_t, std::uint64_t>;

  void insert(std::int64_t value, std::uint64_t handle) { tree_.insert({value, handle}); }
  void erase(std::int64_t value, std::uint64_t handle) { tree_.erase({value, handle}); }
  void clear() { tree_.clear(); }

  std::size_t size() const { return tree_.size(); }
  bool empty() const { return tree_.empty(); }

  /// Value at 0-based ascending rank i; requires i < size().
  std::int64_t at_rank(std::size_t i) const { return tree_.find_by_order(i)->first; }

  /// Nearest-rank percentile; 0 when empty.
  std::int64_t percentile(double p) const {
    if (tree_.empty()) return 0;
    return at_rank(nearest_rank_index(p, tree_.size()));
  }

 private:
  __gnu_pbds::tree<Key, __gnu_pbds::null_type, std::less<Key>, __gnu_pbds::rb_tree_tag,
                   __gnu_pbds::tree_order_statistics_node_update>
      tree_;
};

}  // namespace evictlab

#endif  // EVICTLAB_ORDER_STAT_HPP
