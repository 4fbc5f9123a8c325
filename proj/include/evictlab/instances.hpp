#ifndef EVICTLAB_INSTANCES_HPP
#define EVICTLAB_INSTANCES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "evictlab/order_stat.hpp"
#include "evictlab/trace.hpp"

namespace evictlab {

inline constexpr std::size_t kNumFeatures = 15;
inline constexpr const char* kFeatureVersion = "evictlab-features-v1";

using FeatureVector = std::array<double, kNumFeatures>;

inline const std::array<const char*, kNumFeatures>& feature_list() {
  static const std::array<const char*, kNumFeatures> names = {
      "total_requests",      "unique_objects",      "unique_ratio",       "one_hit_wonder_fraction",
      "mean_object_size",    "max_object_size",     "p50_object_size",    "p90_object_size",
      "mean_interarrival",   "p50_interarrival",    "p90_interarrival",   "mean_reuse_distance",
      "access_count_gini",   "top1pct_request_share", "footprint_byte_ratio"};
  return names;
}

namespace detail {

inline double nearest_rank(std::vector<double>& v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[nearest_rank_index(p, v.size())];
}

/// Fenwick tree over request positions, for exact reuse (stack) distances.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0) {}
  void add(std::size_t i, int d) {
    for (++i; i < t_.size(); i += i & (~i + 1)) t_[i] += d;
  }
  long long prefix(std::size_t i) const {  // sum over [0, i)
    long long s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += t_[i];
    return s;
  }

 private:
  std::vector<long long> t_;
};

}  // namespace detail

/// Fifteen workload features over the first prefix_len requests. Sizes are
/// per unique object (last-seen); interarrivals and reuse distances are in
/// request units.
inline FeatureVector extract_features(const Trace& trace, std::size_t prefix_len = 50'000) {
  const std::size_t n = std::min(prefix_len, trace.size());
  FeatureVector f{};
  if (n == 0) return f;

  struct Obj {
    std::uint64_t size = 0;
    std::uint64_t count = 0;
    std::size_t last = 0;
  };
  std::unordered_map<ObjectId, Obj> objs;
  objs.reserve(n);
  std::vector<double> gaps;
  double total_bytes = 0.0;
  double reuse_sum = 0.0;
  std::size_t reuse_n = 0;
  detail::Fenwick marks(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Request& r = trace[i];
    total_bytes += static_cast<double>(r.size);
    auto [it, fresh] = objs.try_emplace(r.id);
    Obj& o = it->second;
    if (!fresh) {
      gaps.push_back(static_cast<double>(i - o.last));
      // Distinct ids touched strictly between the two accesses.
      reuse_sum += static_cast<double>(marks.prefix(i) - marks.prefix(o.last + 1));
      ++reuse_n;
      marks.add(o.last, -1);
    }
    marks.add(i, +1);
    o.size = r.size;
    ++o.count;
    o.last = i;
  }

  const double total = static_cast<double>(n);
  const double unique = static_cast<double>(objs.size());
  std::vector<double> sizes;
  std::vector<double> counts;
  sizes.reserve(objs.size());
  counts.reserve(objs.size());
  double footprint = 0.0;
  double ohw = 0.0;
  double max_size = 0.0;
  for (const auto& [id, o] : objs) {
    const double s = static_cast<double>(o.size);
    sizes.push_back(s);
    counts.push_back(static_cast<double>(o.count));
    footprint += s;
    max_size = std::max(max_size, s);
    if (o.count == 1) ohw += 1.0;
  }

  f[0] = total;
  f[1] = unique;
  f[2] = unique / total;
  f[3] = ohw / unique;
  f[4] = footprint / unique;
  f[5] = max_size;
  f[6] = detail::nearest_rank(sizes, 0.5);
  f[7] = detail::nearest_rank(sizes, 0.9);
  double gap_sum = 0.0;
  for (double g : gaps) gap_sum += g;
  f[8] = gaps.empty() ? 0.0 : gap_sum / static_cast<double>(gaps.size());
  f[9] = detail::nearest_rank(gaps, 0.5);
  f[10] = detail::nearest_rank(gaps, 0.9);
  f[11] = reuse_n ? reuse_sum / static_cast<double>(reuse_n) : 0.0;

  // Gini over per-object access counts (ascending).
  std::sort(counts.begin(), counts.end());
  double weighted = 0.0, csum = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    weighted += static_cast<double>(i + 1) * counts[i];
    csum += counts[i];
  }
  const double m = static_cast<double>(counts.size());
  f[12] = (m > 0 && csum > 0) ? (2.0 * weighted) / (m * csum) - (m + 1.0) / m : 0.0;

  const auto top = static_cast<std::size_t>(std::ceil(0.01 * m));
  double top_sum = 0.0;
  for (std::size_t i = 0; i < top && i < counts.size(); ++i) top_sum += counts[counts.size() - 1 - i];
  f[13] = top_sum / total;
  f[14] = total_bytes > 0 ? footprint / total_bytes : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// k-means

struct ClusterModel {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::vector<double>> centroids;  // standardized space
  std::vector<double> radii;                   // p95 member distance per cluster
  std::vector<std::size_t> assignments;        // training labels
  double inertia = 0.0;
  std::vector<double> inertia_history;         // after each Lloyd iteration
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  double novelty_factor = 1.5;
  std::string feature_version = kFeatureVersion;
  std::vector<std::string> feature_names;

  std::size_t k() const { return centroids.size(); }

  std::vector<double> standardize(const std::vector<double>& raw) const {
    if (raw.size() != mean.size()) throw std::invalid_argument("feature dimension mismatch");
    std::vector<double> z(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) z[i] = (raw[i] - mean[i]) / stddev[i];
    return z;
  }

  nlohmann::json to_json() const {
    return {{"feature_version", feature_version},
            {"feature_names", feature_names},
            {"k", k()},
            {"seed", seed},
            {"novelty_factor", novelty_factor},
            {"mean", mean},
            {"stddev", stddev},
            {"centroids", centroids},
            {"radii", radii},
            {"inertia", inertia},
            {"iterations", iterations}};
  }

  static ClusterModel from_json(const nlohmann::json& j) {
    ClusterModel m;
    m.feature_version = j.value("feature_version", std::string(kFeatureVersion));
    m.feature_names = j.value("feature_names", std::vector<std::string>{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.novelty_factor = j.value("novelty_factor", 1.5);
    m.mean = j.at("mean").get<std::vector<double>>();
    m.stddev = j.at("stddev").get<std::vector<double>>();
    m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    m.radii = j.at("radii").get<std::vector<double>>();
    m.inertia = j.value("inertia", 0.0);
    m.iterations = j.value("iterations", std::size_t{0});
    if (m.radii.size() != m.centroids.size() || m.stddev.size() != m.mean.size())
      throw std::invalid_argument("inconsistent cluster model");
    for (const auto& c : m.centroids)
      if (c.size() != m.mean.size()) throw std::invalid_argument("centroid dimension mismatch");
    return m;
  }

  static ClusterModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model '" + path + "'");
    return from_json(nlohmann::json::parse(in));
  }
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t nearest(const std::vector<std::vector<double>>& cs, const std::vector<double>& x, double* d2 = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cs.size(); ++c) {
    const double d = sq_dist(cs[c], x);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  if (d2) *d2 = bd;
  return best;
}

}  // namespace detail

struct KMeansOptions {
  std::size_t max_iters = 300;
  double novelty_factor = 1.5;
};

/// z-score standardization, k-means++ seeding, Lloyd iterations to an
/// assignment fixpoint. Deterministic for a fixed seed.
inline ClusterModel kmeans(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& opts = {}) {
  const std::size_t n = vectors.size();
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  if (k > n) throw std::invalid_argument("k (" + std::to_string(k) + ") exceeds number of vectors (" +
                                         std::to_string(n) + ")");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw std::invalid_argument("vectors must share one dimension");

  ClusterModel m;
  m.seed = seed;
  m.novelty_factor = opts.novelty_factor;
  m.mean.assign(dim, 0.0);
  m.stddev.assign(dim, 0.0);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < dim; ++i) m.mean[i] += v[i];
  for (auto& x : m.mean) x /= static_cast<double>(n);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < dim; ++i) m.stddev[i] += (v[i] - m.mean[i]) * (v[i] - m.mean[i]);
  for (auto& s : m.stddev) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 0.0) || !std::isfinite(s)) s = 1.0;
  }
  std::vector<std::vector<double>> z;
  z.reserve(n);
  for (const auto& v : vectors) z.push_back(m.standardize(v));

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>>& cs = m.centroids;
  cs.push_back(z[detail::bounded_rand(rng, n)]);
  std::vector<double> d2(n);
  while (cs.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      detail::nearest(cs, z[i], &d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      // All points coincide with a centroid; fall back to the first unused index.
      pick = cs.size() % n;
    } else {
      const double r = detail::uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (r < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    cs.push_back(z[pick]);
  }

  auto inertia_of = [&](const std::vector<std::size_t>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += detail::sq_dist(z[i], cs[labels[i]]);
    return s;
  };

  std::vector<std::size_t> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) labels[i] = detail::nearest(cs, z[i]);
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    // Update step; empty clusters keep their previous centroid.
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += z[i][d];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (sizes[c])
        for (std::size_t d = 0; d < dim; ++d) cs[c][d] = sums[c][d] / static_cast<double>(sizes[c]);
    // Assignment step.
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = detail::nearest(cs, z[i]);
      if (c != labels[i]) {
        labels[i] = c;
        changed = true;
      }
    }
    m.iterations = it + 1;
    m.inertia_history.push_back(inertia_of(labels));
    if (!changed) break;
  }
  m.assignments = labels;
  m.inertia = inertia_of(labels);

  m.radii.assign(k, 0.0);
  std::vector<std::vector<double>> member_dist(k);
  for (std::size_t i = 0; i < n; ++i) member_dist[labels[i]].push_back(std::sqrt(detail::sq_dist(z[i], cs[labels[i]])));
  for (std::size_t c = 0; c < k; ++c) m.radii[c] = detail::nearest_rank(member_dist[c], 0.95);
  return m;
}

inline ClusterModel kmeans(const std::vector<FeatureVector>& features, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& opts = {}) {
  std::vector<std::vector<double>> v;
  v.reserve(features.size());
  for (const auto& f : features) v.emplace_back(f.begin(), f.end());
  ClusterModel m = kmeans(v, k, seed, opts);
  m.feature_names.assign(feature_list().begin(), feature_list().end());
  return m;
}

struct Classification {
  std::size_t cluster = 0;
  double distance = 0.0;  // standardized Euclidean distance to that centroid
  bool novel = false;
};

/// Nearest centroid; novel when the distance exceeds that cluster's radius
/// times the model's novelty factor.
inline Classification classify(const ClusterModel& m, const std::vector<double>& raw) {
  const auto z = m.standardize(raw);
  double d2 = 0.0;
  Classification c;
  c.cluster = detail::nearest(m.centroids, z, &d2);
  c.distance = std::sqrt(d2);
  c.novel = c.distance > m.radii[c.cluster] * m.novelty_factor;
  return c;
}

inline Classification classify(const ClusterModel& m, const FeatureVector& f) {
  return classify(m, std::vector<double>(f.begin(), f.end()));
}

/// Adjusted Rand index between two labelings of the same points.
inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("labelings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : table) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace evictlab

#endif  // EVICTLAB_INSTANCES_HPP
