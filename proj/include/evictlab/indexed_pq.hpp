#ifndef EVICTLAB_INDEXED_PQ_HPP
#define EVICTLAB_INDEXED_PQ_HPP

#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace evictlab {

/// Binary min-heap over (priority, sequence) with an id -> position index, so
/// entries can be repositioned or removed in O(log n). Pops ascending priority;
/// equal priorities pop lower sequence numbers first.
template <typename Id>
class IndexedPriorityQueue {
 public:
  struct Entry {
    double priority;
    std::uint64_t seq;
    Id id;
  };

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  bool contains(const Id& id) const { return pos_.count(id) != 0; }

  const Entry& top() const { return heap_.front(); }

  double priority(const Id& id) const { return heap_[pos_.at(id)].priority; }

  void push(const Id& id, double priority, std::uint64_t seq) {
    if (contains(id)) throw std::logic_error("duplicate id in priority queue");
    heap_.push_back({priority, seq, id});
    pos_[id] = heap_.size() - 1;
    sift_up(heap_.size() - 1);
  }

  /// Re-keys an existing entry, keeping its sequence number.
  void update(const Id& id, double priority) {
    const std::size_t i = pos_.at(id);
    const double old = heap_[i].priority;
    heap_[i].priority = priority;
    if (priority < old)
      sift_up(i);
    else
      sift_down(i);
  }

  Entry pop() {
    Entry e = heap_.front();
    remove_at(0);
    return e;
  }

  void erase(const Id& id) {
    auto it = pos_.find(id);
    if (it == pos_.end()) return;
    remove_at(it->second);
  }

  void clear() {
    heap_.clear();
    pos_.clear();
  }

 private:
  static bool less(const Entry& a, const Entry& b) {
    if (a.priority != b.priority) return a.priority < b.priority;
    return a.seq < b.seq;
  }

  void place(std::size_t i, Entry e) {
    pos_[e.id] = i;
    heap_[i] = std::move(e);
  }

  void sift_up(std::size_t i) {
    Entry e = heap_[i];
    while (i > 0) {
      const std::size_t parent = (i - 1) / 2;
      if (!less(e, heap_[parent])) break;
      place(i, heap_[parent]);
      i = parent;
    }
    place(i, std::move(e));
  }

  void sift_down(std::size_t i) {
    Entry e = heap_[i];
    const std::size_t n = heap_.size();
    for (;;) {
      std::size_t child = 2 * i + 1;
      if (child >= n) break;
      if (child + 1 < n && less(heap_[child + 1], heap_[child])) ++child;
      if (!less(heap_[child], e)) break;
      place(i, heap_[child]);
      i = child;
    }
    place(i, std::move(e));
  }

  void remove_at(std::size_t i) {
    pos_.erase(heap_[i].id);
    const std::size_t last = heap_.size() - 1;
    if (i != last) {
      heap_[i] = heap_[last];
      pos_[heap_[i].id] = i;
      heap_.pop_back();
      sift_down(i);
      sift_up(i);
    } else {
      heap_.pop_back();
    }
  }

  std::vector<Entry> heap_;
  std::unordered_map<Id, std::size_t> pos_;
};

}  // namespace evictlab

#endif  // EVICTLAB_INDEXED_PQ_HPP
