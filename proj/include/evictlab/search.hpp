#ifndef EVICTLAB_SEARCH_HPP
#define EVICTLAB_SEARCH_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "evictlab/dsl.hpp"
#include "evictlab/llm_client.hpp"
#include "evictlab/simulate.hpp"
#include "evictlab/topology.hpp"
#include "evictlab/trace.hpp"

namespace evictlab {

// ---------------------------------------------------------------------------
// Mutation operators

enum class MutationOp { perturb_literal, swap_operator, swap_feature, wrap_if, crossover };

inline std::string_view to_string(MutationOp op) {
  switch (op) {
    case MutationOp::perturb_literal: return "perturb_literal";
    case MutationOp::swap_operator: return "swap_operator";
    case MutationOp::swap_feature: return "swap_feature";
    case MutationOp::wrap_if: return "wrap_if";
    case MutationOp::crossover: return "crossover";
  }
  return "?";
}

struct MutationOptions {
  std::size_t num_queues = 5;
  /// Offspring larger than this are rejected to keep programs readable.
  std::size_t soft_node_cap = 256;
  int max_attempts = 10;
};

struct MutationResult {
  dsl::Expr expr;
  MutationOp op = MutationOp::perturb_literal;
  /// True when every attempt failed validation and the parent came back.
  bool fell_back = false;
};

namespace detail {

inline void collect_nodes(dsl::Expr& e, std::vector<dsl::Expr*>& out) {
  out.push_back(&e);
  for (auto& a : e.args) collect_nodes(a, out);
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[bounded_rand(rng, v.size())];
}

inline dsl::BinOp other_op(dsl::BinOp op, std::mt19937_64& rng) {
  using dsl::BinOp;
  static const std::vector<BinOp> arith = {BinOp::add, BinOp::sub, BinOp::mul, BinOp::div};
  static const std::vector<BinOp> cmp = {BinOp::lt, BinOp::le, BinOp::gt, BinOp::ge, BinOp::eq, BinOp::ne};
  static const std::vector<BinOp> logic = {BinOp::and_, BinOp::or_};
  const auto& family = std::find(arith.begin(), arith.end(), op) != arith.end() ? arith
                       : std::find(cmp.begin(), cmp.end(), op) != cmp.end()   ? cmp
                                                                               : logic;
  std::vector<BinOp> choices;
  for (auto o : family)
    if (o != op) choices.push_back(o);
  return pick(choices, rng);
}

inline dsl::Expr random_condition(ContextKind kind, std::mt19937_64& rng) {
  using dsl::BinOp;
  using dsl::Expr;
  static const std::vector<BinOp> cmp = {BinOp::lt, BinOp::le, BinOp::gt, BinOp::ge};
  static const std::vector<double> ladder = {0, 1, 2, 4, 8, 16, 100, 1000};
  const auto names = dsl::feature_names(kind);
  Expr lhs = Expr::ident(std::string(names[bounded_rand(rng, names.size())]));
  Expr rhs = uniform01(rng) < 0.5 ? Expr::ident(std::string(names[bounded_rand(rng, names.size())]))
                                  : Expr::num(pick(ladder, rng));
  return Expr::binary(pick(cmp, rng), std::move(lhs), std::move(rhs));
}

/// One unchecked application of op; returns false when op has no target.
inline bool apply_mutation(dsl::Expr& e, MutationOp op, ContextKind kind, const dsl::Expr& donor,
                           std::mt19937_64& rng) {
  using dsl::Expr;
  using dsl::NodeKind;
  std::vector<Expr*> nodes;
  collect_nodes(e, nodes);
  std::vector<Expr*> targets;
  switch (op) {
    case MutationOp::perturb_literal: {
      for (auto* n : nodes)
        if (n->kind == NodeKind::number) targets.push_back(n);
      if (targets.empty()) return false;
      Expr* t = pick(targets, rng);
      if (uniform01(rng) < 0.5)
        t->number *= 0.5 + 1.5 * uniform01(rng);
      else
        t->number += uniform01(rng) < 0.5 ? -1.0 : 1.0;
      return true;
    }
    case MutationOp::swap_operator: {
      for (auto* n : nodes)
        if (n->kind == NodeKind::binary) targets.push_back(n);
      if (targets.empty()) return false;
      Expr* t = pick(targets, rng);
      t->op = other_op(t->op, rng);
      return true;
    }
    case MutationOp::swap_feature: {
      const auto names = dsl::feature_names(kind);
      for (auto* n : nodes)
        if (n->kind == NodeKind::ident && dsl::feature_slot(kind, n->name)) targets.push_back(n);
      if (targets.empty() || names.size() < 2) return false;
      Expr* t = pick(targets, rng);
      std::vector<std::string> others;
      for (auto nm : names)
        if (nm != t->name) others.emplace_back(nm);
      t->name = pick(others, rng);
      return true;
    }
    case MutationOp::wrap_if: {
      Expr* t = pick(nodes, rng);
      Expr alt = *pick(nodes, rng);
      Expr cond = random_condition(kind, rng);
      Expr body = std::move(*t);
      *t = Expr::if_(std::move(cond), std::move(body), std::move(alt));
      return true;
    }
    case MutationOp::crossover: {
      Expr d = donor;
      std::vector<Expr*> dn;
      collect_nodes(d, dn);
      Expr graft = *pick(dn, rng);
      *pick(nodes, rng) = std::move(graft);
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Applies one random operator and re-validates. Crossover grafts from donor
/// (or from the parent itself when no donor is given). Output is always the
/// canonical reparse of the printed program.
inline MutationResult mutate(const dsl::Expr& parent, ContextKind kind, std::mt19937_64& rng,
                             const dsl::Expr* donor = nullptr, const MutationOptions& opts = {}) {
  static const std::vector<MutationOp> ops = {MutationOp::perturb_literal, MutationOp::swap_operator,
                                              MutationOp::swap_feature, MutationOp::wrap_if, MutationOp::crossover};
  const dsl::Expr& graft_source = donor ? *donor : parent;
  MutationOp last = MutationOp::perturb_literal;
  for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
    dsl::Expr child = parent;
    last = detail::pick(ops, rng);
    if (!detail::apply_mutation(child, last, kind, graft_source, rng)) continue;
    if (dsl::node_count(child) > opts.soft_node_cap) continue;
    try {
      child = dsl::parse_expression(dsl::print(child));
    } catch (const dsl::DslError&) {
      continue;
    }
    if (!dsl::validate(child, kind, {opts.num_queues}).ok()) continue;
    return {std::move(child), last, false};
  }
  return {parent, last, true};
}

// ---------------------------------------------------------------------------
// Candidates and configuration

enum class CandidateStatus { ok, parse_fail, validate_fail, runtime_fail };

inline std::string_view to_string(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::ok: return "ok";
    case CandidateStatus::parse_fail: return "parse_fail";
    case CandidateStatus::validate_fail: return "validate_fail";
    case CandidateStatus::runtime_fail: return "runtime_fail";
  }
  return "?";
}

struct Candidate {
  std::uint64_t id = 0;
  std::uint64_t round = 0;  // 0 for seeds
  std::uint64_t index = 0;  // position within its round
  std::vector<std::uint64_t> parents;
  std::string lineage;  // seed | mutation | llm
  std::string source;
  CandidateStatus status = CandidateStatus::parse_fail;
  std::string reason;  // machine-readable failure code
  std::string error;
  std::optional<double> objective;
  nlohmann::json results = nlohmann::json::array();

  bool ok() const { return status == CandidateStatus::ok; }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"id", id},
                        {"round", round},
                        {"index", index},
                        {"parents", parents},
                        {"lineage", lineage},
                        {"source", source},
                        {"status", to_string(status)},
                        {"reason", reason},
                        {"error", error},
                        {"results", results}};
    j["objective"] = objective ? nlohmann::json(*objective) : nlohmann::json(nullptr);
    return j;
  }
};

enum class SearchTarget { rank_score, topology };
enum class ObjectiveKind { object_hit_rate, mrr_vs_fifo, weighted };

inline ObjectiveKind parse_objective(const std::string& s) {
  if (s == "object_hit_rate") return ObjectiveKind::object_hit_rate;
  if (s == "mrr_vs_fifo") return ObjectiveKind::mrr_vs_fifo;
  if (s == "weighted") return ObjectiveKind::weighted;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

struct SearchInstance {
  std::string name;
  std::shared_ptr<const Trace> trace;
  CacheConfig cache;
};

struct SearchConfig {
  std::size_t candidates_per_round = 25;
  std::size_t exemplar_count = 2;
  std::size_t max_rounds = 10;
  /// Stop when best-so-far gains less than plateau_epsilon over this many
  /// rounds; 0 disables the rule.
  std::size_t plateau_window = 5;
  double plateau_epsilon = 0.001;
  /// Stop as soon as the best objective reaches this value.
  std::optional<double> target_objective;
  std::vector<SearchInstance> instances;
  SearchTarget target = SearchTarget::rank_score;
  MechanismSpec mechanism{};
  ObjectiveKind objective = ObjectiveKind::object_hit_rate;
  double weight_hit_rate = 1.0;
  double weight_mrr = 0.0;
  std::uint64_t seed = 0;
  /// Parallel evaluation workers; results are order-independent.
  std::size_t workers = 1;
  /// Append-only JSONL database; empty keeps rows in memory only.
  std::string db_path;
  MutationOptions mutation{};
};

/// Prompt surface handed to a generator.
struct Template {
  std::string task;
  std::string feature_docs;
  std::string signature;
  std::string constraints;
  std::vector<std::string> seeds;
};

inline Template default_rank_template() {
  Template t;
  t.task =
      "Write an eviction scoring function for a cache. The cache evicts the resident object with the lowest "
      "score first; higher values are more likely to stay in cache. Maximize the object hit rate.";
  t.feature_docs =
      "vtime: current virtual time (request index)\n"
      "obj.count: accesses since the object entered the cache\n"
      "obj.last_access_vtime: virtual time of the most recent access\n"
      "obj.addition_vtime: virtual time the object entered the cache\n"
      "obj.size: object size in bytes\n"
      "L_aging: score of the most recently evicted object\n"
      "percentile(counts|ages|sizes, p): nearest-rank percentile over resident objects\n"
      "ghost_contains(), ghost_count(), ghost_age(): eviction history of this object (0 when absent)\n"
      "min, max, abs, floor, log, exp, pow(a, b), clamp(x, lo, hi)";
  t.signature = "score(obj) -> real, written as a single expression";
  t.constraints =
      "One expression only. Allowed syntax: numbers, the identifiers above, + - * /, comparisons, and/or/not, "
      "if c then a else b, let x = e in body. No loops, no statements, at most 10000 nodes. Reply with the "
      "expression in a single fenced code block.";
  t.seeds = {"vtime"};
  return t;
}

inline Template default_topology_template(const std::string& seed_topology_json) {
  Template t;
  t.task =
      "Design a multi-queue cache topology: up to five FIFO or LRU queues plus a ghost FIFO. An init program "
      "chooses the queue for a new object; each queue's transition program decides where its evicted tail goes "
      "(queue index, -1 ghost, -2 delete). Maximize the object hit rate.";
  t.feature_docs =
      "init: vtime, in_ghost, obj_size, num_queues, is_full(i)\n"
      "transition: vtime, obj.cache_access_count, obj.queue_access_count, obj.cache_insertion_vtime, "
      "obj.queue_insertion_vtime, obj.last_access_vtime, obj.current_queue, num_queues";
  t.signature =
      "JSON object with queue_types, queue_fractions, ghost_fraction, max_transitions_allowed, init_program, "
      "transition_programs";
  t.constraints = "Programs are single expressions in the scoring language. Reply with the JSON in a single fenced "
                  "code block.";
  t.seeds = {seed_topology_json};
  return t;
}

// ---------------------------------------------------------------------------
// Generators

struct Generated {
  std::string source;
  std::vector<std::uint64_t> parents;
  std::string lineage;
  /// The reply carried no code block; recorded as parse_fail.
  bool extraction_failed = false;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::vector<Generated> generate(const Template& tmpl, const std::vector<const Candidate*>& exemplars,
                                          std::size_t n) = 0;
};

/// Deterministic offline generator built on mutate().
class MutationGenerator : public Generator {
 public:
  MutationGenerator(SearchTarget target, std::uint64_t seed, MutationOptions opts = {})
      : target_(target), rng_(seed), opts_(opts) {}

  std::vector<Generated> generate(const Template&, const std::vector<const Candidate*>& exemplars,
                                  std::size_t n) override {
    if (exemplars.empty()) throw std::invalid_argument("mutation generator needs at least one exemplar");
    std::vector<Generated> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Candidate* parent = exemplars[i % exemplars.size()];
      const Candidate* donor = exemplars[detail::bounded_rand(rng_, exemplars.size())];
      Generated g;
      g.lineage = "mutation";
      g.parents = {parent->id};
      if (donor != parent) g.parents.push_back(donor->id);
      g.source = target_ == SearchTarget::rank_score ? mutate_rank(parent->source, donor->source)
                                                     : mutate_topology(parent->source, donor->source);
      out.push_back(std::move(g));
    }
    return out;
  }

 private:
  std::string mutate_rank(const std::string& parent, const std::string& donor) {
    const dsl::Expr p = dsl::parse_expression(parent);
    const dsl::Expr d = dsl::parse_expression(donor);
    return dsl::print(mutate(p, ContextKind::rank_score, rng_, &d, opts_).expr);
  }

  std::string mutate_topology(const std::string& parent, const std::string& donor) {
    Topology p = Topology::from_json(nlohmann::json::parse(parent));
    const Topology d = Topology::from_json(nlohmann::json::parse(donor));
    const std::size_t m = p.num_queues();
    const std::size_t slot = detail::bounded_rand(rng_, m + 1);  // 0 = init, 1..m = transitions
    MutationOptions opts = opts_;
    opts.num_queues = m;
    const bool same_shape = d.num_queues() == m;
    if (slot == 0) {
      const dsl::Expr* donor_ast = same_shape ? &d.init_program.ast() : nullptr;
      auto r = mutate(p.init_program.ast(), ContextKind::qt_init, rng_, donor_ast, opts);
      p.init_program = make_program(std::move(r.expr), ContextKind::qt_init, {}, m);
    } else {
      const std::size_t q = slot - 1;
      const dsl::Expr* donor_ast = same_shape ? &d.transition_programs[q].ast() : nullptr;
      auto r = mutate(p.transition_programs[q].ast(), ContextKind::qt_transition, rng_, donor_ast, opts);
      p.transition_programs[q] = make_program(std::move(r.expr), ContextKind::qt_transition, {}, m);
    }
    return p.to_json().dump();
  }

  SearchTarget target_;
  std::mt19937_64 rng_;
  MutationOptions opts_;
};

/// Assembles the chat prompt from a template and scored exemplars.
inline std::vector<ChatMessage> build_prompt(const Template& tmpl, const std::vector<const Candidate*>& exemplars) {
  std::ostringstream user;
  user << tmpl.task << "\n\n## Inputs\n" << tmpl.feature_docs << "\n\n## Signature\n" << tmpl.signature
       << "\n\n## Constraints\n" << tmpl.constraints << "\n\n## Previous heuristics\n";
  if (exemplars.empty())
    for (const auto& s : tmpl.seeds) user << "```\n" << s << "\n```\n";
  for (const Candidate* c : exemplars) {
    user << "Objective " << (c->objective ? dsl::format_number(*c->objective) : std::string("n/a")) << ":\n```\n"
         << c->source << "\n```\n";
  }
  user << "\nWrite an improved heuristic in a single code block.";
  return {{"system", "You design cache replacement heuristics."}, {"user", user.str()}};
}

/// Calls a chat-completions endpoint once per requested candidate.
class LlmGenerator : public Generator {
 public:
  explicit LlmGenerator(ChatClient& client) : client_(client) {}

  std::vector<Generated> generate(const Template& tmpl, const std::vector<const Candidate*>& exemplars,
                                  std::size_t n) override {
    const auto messages = build_prompt(tmpl, exemplars);
    std::vector<std::uint64_t> parents;
    for (const Candidate* c : exemplars) parents.push_back(c->id);
    std::vector<Generated> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string reply = client_.complete(messages);
      Generated g;
      g.lineage = "llm";
      g.parents = parents;
      if (auto code = extract_code_block(reply))
        g.source = std::move(*code);
      else
        g.extraction_failed = true;
      out.push_back(std::move(g));
    }
    return out;
  }

 private:
  ChatClient& client_;
};

// ---------------------------------------------------------------------------
// Evaluation harness

/// FIFO reference results per instance, needed by the MRR objective.
inline std::vector<SimResult> fifo_baselines(const SearchConfig& cfg) {
  std::vector<SimResult> out;
  const PolicyHandle fifo = builtin_policy("fifo");
  for (const auto& inst : cfg.instances) out.push_back(run_simulation(*inst.trace, fifo, inst.cache));
  return out;
}

/// Parses, validates and replays one candidate source; fills status, reason,
/// objective and per-instance results.
inline void evaluate_candidate(Candidate& c, const SearchConfig& cfg, const std::vector<SimResult>& fifo) {
  PolicyHandle handle;
  try {
    if (cfg.target == SearchTarget::rank_score) {
      dsl::Expr ast = dsl::parse_expression(c.source);
      const auto report = dsl::validate(ast, ContextKind::rank_score);
      if (!report.ok()) {
        c.status = CandidateStatus::validate_fail;
        c.reason = std::string(dsl::to_string(report.issues.front().reason));
        c.error = report.summary();
        return;
      }
      auto prog = std::make_shared<const ScoreProgram>(make_program(std::move(ast), ContextKind::rank_score, c.source));
      handle = {"candidate", RankPolicySpec{"candidate", std::move(prog), cfg.mechanism}};
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(c.source);
      } catch (const nlohmann::json::exception& e) {
        c.status = CandidateStatus::parse_fail;
        c.reason = "syntax_error";
        c.error = e.what();
        return;
      }
      try {
        handle = topology_policy("candidate", Topology::from_json(j));
      } catch (const nlohmann::json::exception& e) {
        c.status = CandidateStatus::validate_fail;
        c.reason = "bad_topology";
        c.error = e.what();
        return;
      } catch (const std::invalid_argument& e) {
        c.status = CandidateStatus::validate_fail;
        c.reason = "bad_topology";
        c.error = e.what();
        return;
      }
    }
  } catch (const dsl::DslError& e) {
    c.status = e.reason() == dsl::Reason::syntax_error ? CandidateStatus::parse_fail : CandidateStatus::validate_fail;
    c.reason = std::string(dsl::to_string(e.reason()));
    c.error = e.what();
    return;
  }

  double hit_sum = 0.0, mrr_sum = 0.0;
  c.results = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.instances.size(); ++i) {
    const auto& inst = cfg.instances[i];
    SimResult r = run_simulation(*inst.trace, handle, inst.cache);
    r.policy = inst.name;
    if (!r.ok()) {
      c.status = CandidateStatus::runtime_fail;
      c.reason = "runtime_fault";
      c.error = inst.name + ": " + r.error;
      c.results.push_back(r.to_json());
      return;
    }
    hit_sum += r.object_hit_rate();
    mrr_sum += miss_rate_reduction(r, fifo[i]);
    nlohmann::json row = r.to_json();
    row["mrr_vs_fifo"] = miss_rate_reduction(r, fifo[i]);
    c.results.push_back(std::move(row));
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, cfg.instances.size()));
  const double hit = hit_sum / n, mrr = mrr_sum / n;
  switch (cfg.objective) {
    case ObjectiveKind::object_hit_rate: c.objective = hit; break;
    case ObjectiveKind::mrr_vs_fifo: c.objective = mrr; break;
    case ObjectiveKind::weighted: c.objective = cfg.weight_hit_rate * hit + cfg.weight_mrr * mrr; break;
  }
  c.status = CandidateStatus::ok;
}

// ---------------------------------------------------------------------------
// Search loop

struct SearchResult {
  std::vector<Candidate> db;
  std::optional<std::size_t> best;  // index into db
  /// Best-so-far objective after the seeds (index 0) and after each round.
  std::vector<double> best_history;
  std::size_t rounds_completed = 0;
  std::string stop_reason;  // max_rounds | plateau | target | generator_error
  std::string error;

  const Candidate* best_candidate() const { return best ? &db[*best] : nullptr; }
};

/// Global top-k ok candidates by objective, ties to the earlier id.
inline std::vector<const Candidate*> select_exemplars(const std::vector<Candidate>& db, std::size_t k) {
  std::vector<const Candidate*> ok;
  for (const auto& c : db)
    if (c.ok()) ok.push_back(&c);
  std::stable_sort(ok.begin(), ok.end(), [](const Candidate* a, const Candidate* b) {
    if (*a->objective != *b->objective) return *a->objective > *b->objective;
    return a->id < b->id;
  });
  if (ok.size() > k) ok.resize(k);
  return ok;
}

namespace detail {

inline void evaluate_batch(std::vector<Candidate>& batch, const SearchConfig& cfg, const std::vector<SimResult>& fifo) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch[i].reason.empty()) todo.push_back(i);
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, todo.size()));
  if (workers == 1) {
    for (auto i : todo) evaluate_candidate(batch[i], cfg, fifo);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < todo.size(); k = next++) evaluate_candidate(batch[todo[k]], cfg, fifo);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Runs the generate / validate / evaluate / select loop. Rows reach the DB
/// file in (round, index) order as each round completes.
inline SearchResult run_search(const SearchConfig& cfg, const Template& tmpl, Generator& gen) {
  if (cfg.candidates_per_round == 0) throw std::invalid_argument("candidates_per_round must be >= 1");
  if (cfg.exemplar_count == 0) throw std::invalid_argument("exemplar_count must be >= 1");
  if (tmpl.seeds.empty()) throw std::invalid_argument("template needs at least one seed program");
  if (tmpl.signature.empty()) throw std::invalid_argument("template needs a signature");
  if (cfg.instances.empty()) throw std::invalid_argument("search needs at least one evaluation instance");

  std::ofstream db_file;
  if (!cfg.db_path.empty()) {
    db_file.open(cfg.db_path, std::ios::trunc);
    if (!db_file) throw std::runtime_error("cannot write candidate DB '" + cfg.db_path + "'");
  }
  SearchResult res;
  const auto fifo = fifo_baselines(cfg);
  std::uint64_t next_id = 0;

  auto commit = [&](std::vector<Candidate>& batch) {
    detail::evaluate_batch(batch, cfg, fifo);
    for (auto& c : batch) {
      if (db_file) db_file << c.to_json().dump() << '\n';
      res.db.push_back(std::move(c));
    }
    if (db_file) db_file.flush();
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < res.db.size(); ++i) {
      const auto& c = res.db[i];
      if (!c.ok()) continue;
      if (!best || *c.objective > *res.db[*best].objective) best = i;
    }
    res.best = best;
    res.best_history.push_back(best ? *res.db[*best].objective : -std::numeric_limits<double>::infinity());
  };

  std::vector<Candidate> seeds;
  for (std::size_t i = 0; i < tmpl.seeds.size(); ++i) {
    Candidate c;
    c.id = next_id++;
    c.round = 0;
    c.index = i;
    c.lineage = "seed";
    c.source = tmpl.seeds[i];
    seeds.push_back(std::move(c));
  }
  commit(seeds);
  res.stop_reason = "max_rounds";

  for (std::size_t round = 1; round <= cfg.max_rounds; ++round) {
    if (cfg.target_objective && res.best && *res.db[*res.best].objective >= *cfg.target_objective) {
      res.stop_reason = "target";
      break;
    }
    auto exemplars = select_exemplars(res.db, cfg.exemplar_count);
    if (exemplars.empty())
      for (std::size_t i = 0; i < tmpl.seeds.size(); ++i) exemplars.push_back(&res.db[i]);

    std::vector<Generated> generated;
    try {
      generated = gen.generate(tmpl, exemplars, cfg.candidates_per_round);
    } catch (const GeneratorUnavailable& e) {
      res.stop_reason = "generator_error";
      res.error = e.what();
      break;
    }
    if (generated.size() != cfg.candidates_per_round)
      throw std::logic_error("generator returned the wrong number of candidates");

    std::vector<Candidate> batch;
    for (std::size_t i = 0; i < generated.size(); ++i) {
      Candidate c;
      c.id = next_id++;
      c.round = round;
      c.index = i;
      c.parents = generated[i].parents;
      c.lineage = generated[i].lineage;
      c.source = generated[i].source;
      if (generated[i].extraction_failed) {
        c.status = CandidateStatus::parse_fail;
        c.reason = "no_code_block";
        c.error = "reply contained no fenced code block";
      }
      batch.push_back(std::move(c));
    }
    commit(batch);
    res.rounds_completed = round;

    const std::size_t w = cfg.plateau_window;
    if (w > 0 && round >= w && round < cfg.max_rounds) {
      const double now = res.best_history[round];
      const double then = res.best_history[round - w];
      if (now - then < cfg.plateau_epsilon) {
        res.stop_reason = "plateau";
        break;
      }
    }
  }
  return res;
}

}  // namespace evictlab

#endif  // EVICTLAB_SEARCH_HPP
