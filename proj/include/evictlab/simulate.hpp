#ifndef EVICTLAB_SIMULATE_HPP
#define EVICTLAB_SIMULATE_HPP

#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>

#include "evictlab/engine.hpp"
#include "evictlab/rank_policies.hpp"
#include "evictlab/topology.hpp"

namespace evictlab {

struct NativePolicySpec {
  std::string name;
};

/// Anything run_simulation can replay: a rank policy, a native baseline, or a
/// queue topology.
struct PolicyHandle {
  std::string label;
  std::variant<RankPolicySpec, NativePolicySpec, Topology> body;
};

class UnknownPolicyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline PolicyHandle builtin_policy(const std::string& name, MechanismSpec mech = {}) {
  if (is_builtin_rank(name)) return {name, builtin_rank(name, mech)};
  if (is_builtin_native(name)) return {name, NativePolicySpec{name}};
  throw UnknownPolicyError("unknown builtin policy '" + name + "'");
}

inline PolicyHandle dsl_policy(const std::string& label, const std::string& source, MechanismSpec mech = {}) {
  auto prog = std::make_shared<const ScoreProgram>(parse_program(source, ContextKind::rank_score));
  return {label, RankPolicySpec{label, std::move(prog), mech}};
}

inline PolicyHandle topology_policy(const std::string& label, Topology topo) { return {label, std::move(topo)}; }

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Resolves "builtin:<name>", "dsl:<path>" or "topology:<path>", optionally
/// followed by ";mechanism=<pq|fullsort|samplesort:S>".
inline PolicyHandle policy_from_ref(const std::string& ref, MechanismSpec default_mech = {}) {
  std::string body = ref;
  MechanismSpec mech = default_mech;
  if (const auto semi = ref.find(';'); semi != std::string::npos) {
    body = ref.substr(0, semi);
    const std::string opt = ref.substr(semi + 1);
    const std::string key = "mechanism=";
    if (opt.rfind(key, 0) != 0) throw UnknownPolicyError("unknown policy option '" + opt + "'");
    mech = parse_mechanism(opt.substr(key.size()));
  }
  const auto colon = body.find(':');
  if (colon == std::string::npos) throw UnknownPolicyError("policy ref '" + ref + "' lacks a scheme");
  const std::string scheme = body.substr(0, colon);
  const std::string arg = body.substr(colon + 1);
  PolicyHandle h;
  if (scheme == "builtin") {
    h = builtin_policy(arg, mech);
  } else if (scheme == "dsl") {
    h = dsl_policy(arg, read_text_file(arg), mech);
  } else if (scheme == "topology") {
    h = topology_policy(arg, Topology::load(arg));
  } else {
    throw UnknownPolicyError("unknown policy scheme '" + scheme + "'");
  }
  h.label = ref;
  return h;
}

/// Replays trace under the policy. Runtime faults come back as
/// SimStatus::runtime_fail; configuration errors throw.
inline SimResult run_simulation(const Trace& trace, const PolicyHandle& policy, const CacheConfig& cfg,
                                SimObserver* observer = nullptr) {
  SimResult res;
  if (const auto* rank = std::get_if<RankPolicySpec>(&policy.body)) {
    RankPolicy p(*rank, cfg);
    res = simulate(trace, p, cfg, observer);
  } else if (const auto* native = std::get_if<NativePolicySpec>(&policy.body)) {
    auto p = make_native_policy(native->name);
    res = simulate(trace, *p, cfg, observer);
  } else {
    res = simulate_topology(trace, std::get<Topology>(policy.body), cfg, observer);
  }
  res.policy = policy.label;
  return res;
}

}  // namespace evictlab

#endif  // EVICTLAB_SIMULATE_HPP
