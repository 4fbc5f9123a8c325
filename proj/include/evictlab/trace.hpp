#ifndef EVICTLAB_TRACE_HPP
#define EVICTLAB_TRACE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

namespace evictlab {

using ObjectId = std::uint64_t;
using VTime = std::int64_t;

/// One trace event. vtime is the request index and doubles as the simulator clock.
struct Request {
  VTime vtime = 0;
  ObjectId id = 0;
  std::uint64_t size = 1;

  friend bool operator==(const Request&, const Request&) = default;
};

using Trace = std::vector<Request>;

struct TraceSummary {
  std::uint64_t total_requests = 0;
  std::uint64_t unique_objects = 0;
  std::uint64_t footprint_bytes = 0;
  double one_hit_wonder_fraction = 0.0;
};

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    const std::uint64_t d = static_cast<std::uint64_t>(c - '0');
    if (v > (std::numeric_limits<std::uint64_t>::max() - d) / 10) return false;
    v = v * 10 + d;
  }
  out = v;
  return true;
}

// FNV-1a; non-numeric ids are hashed into the 64-bit id space.
inline ObjectId hash_id(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Maps an object-id token to its 64-bit id: decimal integers are taken as-is,
/// anything else is hashed.
inline ObjectId object_id_from_token(std::string_view token) {
  std::uint64_t v = 0;
  if (detail::parse_u64(token, v)) return v;
  return detail::hash_id(token);
}

inline Trace parse_csv_trace(std::istream& in) {
  Trace out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    const auto comma = sv.find(',');
    std::string_view id_tok = detail::trim(sv.substr(0, comma));
    if (id_tok.empty()) throw TraceParseError(lineno, "empty object id");
    std::uint64_t size = 1;
    if (comma != std::string_view::npos) {
      const std::string_view size_tok = detail::trim(sv.substr(comma + 1));
      if (size_tok.find(',') != std::string_view::npos)
        throw TraceParseError(lineno, "too many fields");
      if (!size_tok.empty() && size_tok.front() == '-')
        throw TraceParseError(lineno, "size must be positive");
      if (!detail::parse_u64(size_tok, size))
        throw TraceParseError(lineno, "malformed size '" + std::string(size_tok) + "'");
      if (size == 0) throw TraceParseError(lineno, "size must be positive");
    }
    out.push_back({static_cast<VTime>(out.size()), object_id_from_token(id_tok), size});
  }
  return out;
}

inline Trace parse_csv_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace '" + path + "'");
  return parse_csv_trace(in);
}

inline void write_csv_trace(std::ostream& out, const Trace& trace) {
  for (const auto& r : trace) out << r.id << ',' << r.size << '\n';
}

inline void write_csv_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace '" + path + "'");
  write_csv_trace(out, trace);
}

inline TraceSummary summarize(const Trace& trace) {
  TraceSummary s;
  s.total_requests = trace.size();
  struct Seen {
    std::uint64_t size;
    std::uint64_t count;
  };
  std::unordered_map<ObjectId, Seen> seen;
  seen.reserve(trace.size());
  for (const auto& r : trace) {
    auto [it, inserted] = seen.try_emplace(r.id, Seen{r.size, 0});
    it->second.size = r.size;
    ++it->second.count;
  }
  s.unique_objects = seen.size();
  std::uint64_t ohw = 0;
  for (const auto& [id, v] : seen) {
    s.footprint_bytes += v.size;
    if (v.count == 1) ++ohw;
  }
  if (s.unique_objects > 0)
    s.one_hit_wonder_fraction = static_cast<double>(ohw) / static_cast<double>(s.unique_objects);
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic workloads. All randomness comes from mt19937_64 bit streams with
// hand-written transforms so output is identical across standard libraries.

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased integer in [0, n); n must be >= 1.
inline std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

struct ConstantSize {
  std::uint64_t bytes = 1;
};

struct LognormalSize {
  double mu = 8.0;
  double sigma = 1.0;
};

using SizeModel = std::variant<ConstantSize, LognormalSize>;

inline std::uint64_t draw_size(const SizeModel& model, std::mt19937_64& rng) {
  if (const auto* c = std::get_if<ConstantSize>(&model)) return std::max<std::uint64_t>(1, c->bytes);
  const auto& ln = std::get<LognormalSize>(model);
  const double v = std::exp(ln.mu + ln.sigma * detail::standard_normal(rng));
  if (!(v < 1e18)) return static_cast<std::uint64_t>(1e18);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(v)));
}

/// Zipf(alpha) over ranks 1..num_objects; rank r maps to id id_offset + r - 1.
struct ZipfSpec {
  std::uint64_t num_objects = 1000;
  double alpha = 1.0;
  SizeModel size = ConstantSize{1};
  ObjectId id_offset = 0;
};

/// Every request touches a fresh id: id_offset, id_offset + 1, ...
struct ScanSpec {
  SizeModel size = ConstantSize{1};
  ObjectId id_offset = 1'000'000'000;
};

/// Cyclic sweep over a working set of ids id_offset .. id_offset + working_set - 1.
struct LoopSpec {
  std::uint64_t working_set = 100;
  SizeModel size = ConstantSize{1};
  ObjectId id_offset = 2'000'000'000;
};

using GeneratorSpec = std::variant<ZipfSpec, ScanSpec, LoopSpec>;

struct Phase {
  GeneratorSpec generator;
  std::uint64_t length = 0;
};

namespace detail {

class SizeTable {
 public:
  std::uint64_t get(ObjectId id, const SizeModel& model, std::mt19937_64& rng) {
    auto it = sizes_.find(id);
    if (it != sizes_.end()) return it->second;
    const std::uint64_t s = draw_size(model, rng);
    sizes_.emplace(id, s);
    return s;
  }

 private:
  std::unordered_map<ObjectId, std::uint64_t> sizes_;
};

inline void append_phase(Trace& out, const GeneratorSpec& gen, std::uint64_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SizeTable sizes;
  auto push = [&](ObjectId id, const SizeModel& model) {
    const std::uint64_t size = sizes.get(id, model, rng);
    out.push_back({static_cast<VTime>(out.size()), id, size});
  };
  if (const auto* z = std::get_if<ZipfSpec>(&gen)) {
    if (z->num_objects == 0) throw std::invalid_argument("zipf: num_objects must be >= 1");
    if (!(z->alpha >= 0.0)) throw std::invalid_argument("zipf: alpha must be >= 0");
    std::vector<double> cdf(z->num_objects);
    double acc = 0.0;
    for (std::uint64_t r = 0; r < z->num_objects; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), z->alpha);
      cdf[r] = acc;
    }
    for (auto& c : cdf) c /= acc;
    for (std::uint64_t i = 0; i < length; ++i) {
      const double u = uniform01(rng);
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      push(z->id_offset + static_cast<ObjectId>(it - cdf.begin()), z->size);
    }
  } else if (const auto* s = std::get_if<ScanSpec>(&gen)) {
    for (std::uint64_t i = 0; i < length; ++i) push(s->id_offset + i, s->size);
  } else {
    const auto& l = std::get<LoopSpec>(gen);
    if (l.working_set == 0) throw std::invalid_argument("loop: working_set must be >= 1");
    for (std::uint64_t i = 0; i < length; ++i) push(l.id_offset + i % l.working_set, l.size);
  }
}

}  // namespace detail

inline Trace generate_zipf_trace(std::uint64_t num_objects, std::uint64_t num_requests, double alpha,
                                 const SizeModel& size_model, std::uint64_t seed) {
  if (num_requests == 0) throw std::invalid_argument("zipf: num_requests must be >= 1");
  Trace out;
  out.reserve(num_requests);
  detail::append_phase(out, ZipfSpec{num_objects, alpha, size_model, 0}, num_requests, seed);
  return out;
}

/// Phase i is generated with seed ^ (i * golden-ratio constant), so a single
/// phase reproduces the standalone generator for the same seed.
inline Trace generate_phase_trace(const std::vector<Phase>& phases, std::uint64_t seed) {
  if (phases.empty()) throw std::invalid_argument("phase trace: at least one phase required");
  Trace out;
  std::uint64_t total = 0;
  for (const auto& p : phases) total += p.length;
  out.reserve(total);
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const std::uint64_t phase_seed = seed ^ (static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL);
    detail::append_phase(out, phases[i].generator, phases[i].length, phase_seed);
  }
  return out;
}

/// Concatenates traces, renumbering vtime.
inline Trace concat(const Trace& a, const Trace& b) {
  Trace out;
  out.reserve(a.size() + b.size());
  for (const auto* t : {&a, &b})
    for (auto r : *t) {
      r.vtime = static_cast<VTime>(out.size());
      out.push_back(r);
    }
  return out;
}

/// First n requests (or the whole trace when shorter).
inline Trace prefix(const Trace& t, std::size_t n) {
  return Trace(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(n, t.size())));
}

inline std::uint64_t footprint(const Trace& t, bool size_agnostic) {
  const auto s = summarize(t);
  return size_agnostic ? s.unique_objects : s.footprint_bytes;
}

}  // namespace evictlab

#endif  // EVICTLAB_TRACE_HPP
