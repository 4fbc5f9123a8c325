// evictlab command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evictlab/instances.hpp"
#include "evictlab/llm_client.hpp"
#include "evictlab/search.hpp"
#include "evictlab/simulate.hpp"
#include "evictlab/trace.hpp"

namespace el = evictlab;
using nlohmann::json;

namespace {

/// Errors that map to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON config files: every key is a long flag name; arrays supply repeated
// values; nested objects address subcommands.

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? json(res.front()) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      out.push_back(std::move(item));
    }
  }
};

void add_config(CLI::App* app) {
  app->set_config("--config", "", "JSON file supplying any flag of this command");
  app->config_formatter(std::make_shared<JsonConfig>());
}

// ---------------------------------------------------------------------------
// Shared helpers

el::CacheMode parse_mode(const std::string& s) {
  if (s == "size_aware") return el::CacheMode::size_aware;
  if (s == "size_agnostic") return el::CacheMode::size_agnostic;
  throw UsageError("unknown cache mode '" + s + "'");
}

/// abs:N, frac:x or a preset (tiny, small, large) resolved against the trace footprint.
std::uint64_t resolve_capacity(const std::string& spec, const el::Trace& trace, el::CacheMode mode) {
  static const std::map<std::string, double> presets = {{"tiny", 0.001}, {"small", 0.01}, {"large", 0.1}};
  double frac = -1.0;
  if (auto it = presets.find(spec); it != presets.end()) {
    frac = it->second;
  } else if (spec.rfind("abs:", 0) == 0) {
    std::uint64_t v = 0;
    const std::string n = spec.substr(4);
    if (!el::detail::parse_u64(n, v) || v == 0) throw UsageError("bad absolute capacity '" + spec + "'");
    return v;
  } else if (spec.rfind("frac:", 0) == 0) {
    try {
      std::size_t used = 0;
      frac = std::stod(spec.substr(5), &used);
      if (used != spec.size() - 5) frac = -1.0;
    } catch (const std::exception&) {
      frac = -1.0;
    }
    if (!(frac > 0.0 && frac <= 1.0)) throw UsageError("capacity fraction must lie in (0, 1]: '" + spec + "'");
  } else {
    throw UsageError("unknown capacity spec '" + spec + "' (use abs:N, frac:x, tiny, small or large)");
  }
  const double fp = static_cast<double>(el::footprint(trace, mode == el::CacheMode::size_agnostic));
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(frac * fp)));
}

el::PolicyHandle resolve_policy(const std::string& ref, const el::MechanismSpec& mech) {
  try {
    return el::policy_from_ref(ref, mech);
  } catch (const el::UnknownPolicyError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

el::MechanismSpec resolve_mechanism(const std::string& s) {
  try {
    return el::parse_mechanism(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

/// Writes to path, or stdout when path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::string fmt(double v) { return el::dsl::format_number(v); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

/// Aligned text rendering of a header + rows table.
std::string text_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      out << std::left << std::setw(static_cast<int>(w[i])) << r[i];
      if (i + 1 < r.size()) out << "  ";
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_escape(r[i]);
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

el::Trace load_trace(const std::string& path) { return el::parse_csv_trace(path); }

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::vector<std::string> traces;
  std::vector<std::string> policies;
  std::vector<std::string> capacities = {"small"};
  std::string mode = "size_aware";
  std::string mechanism = "pq";
  std::size_t history = 4096;
  std::uint64_t seed = 0;
  std::uint64_t eval_budget = 0;
  std::string format = "csv";
  std::string output;
  bool timing = false;
  std::size_t workers = 1;
};

int cmd_simulate(const SimulateOpts& o) {
  const el::CacheMode mode = parse_mode(o.mode);
  const el::MechanismSpec mech = resolve_mechanism(o.mechanism);
  if (o.format != "csv" && o.format != "json" && o.format != "text") throw UsageError("unknown format '" + o.format + "'");
  std::vector<el::PolicyHandle> policies;
  for (const auto& ref : o.policies) {
    policies.push_back(resolve_policy(ref, mech));
    if (std::holds_alternative<el::Topology>(policies.back().body) && mode != el::CacheMode::size_agnostic)
      throw UsageError("topology policies need --mode size_agnostic");
  }
  const el::PolicyHandle fifo = el::builtin_policy("fifo", mech);

  struct Job {
    std::size_t trace, cap, policy;  // policy == npos for the FIFO reference
  };
  std::vector<el::Trace> traces;
  for (const auto& p : o.traces) traces.push_back(load_trace(p));
  std::vector<std::vector<std::uint64_t>> caps(traces.size());
  for (std::size_t t = 0; t < traces.size(); ++t)
    for (const auto& spec : o.capacities) caps[t].push_back(resolve_capacity(spec, traces[t], mode));

  std::vector<Job> jobs;
  for (std::size_t t = 0; t < traces.size(); ++t)
    for (std::size_t c = 0; c < o.capacities.size(); ++c) {
      jobs.push_back({t, c, std::string::npos});
      for (std::size_t p = 0; p < policies.size(); ++p) jobs.push_back({t, c, p});
    }
  std::vector<el::SimResult> results(jobs.size());
  parallel_for(jobs.size(), o.workers, [&](std::size_t i) {
    const Job& j = jobs[i];
    el::CacheConfig cfg{caps[j.trace][j.cap], mode, o.history, o.seed, o.eval_budget};
    results[i] = el::run_simulation(traces[j.trace], j.policy == std::string::npos ? fifo : policies[j.policy], cfg);
  });

  std::vector<std::string> header = {"trace",    "policy", "capacity_spec",  "mode",           "capacity",
                                     "requests", "hits",   "misses",         "object_hit_rate", "byte_hit_rate",
                                     "evictions", "mrr_vs_fifo", "status"};
  if (o.timing) header.push_back("wall_time_ms");
  struct Row {
    std::size_t trace, cap;
    std::string policy;
    std::vector<std::string> cells;
    json obj;
  };
  std::vector<Row> rows;
  const el::SimResult* ref = nullptr;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& j = jobs[i];
    if (j.policy == std::string::npos) {
      ref = &results[i];
      continue;
    }
    const el::SimResult& r = results[i];
    const double mrr = el::miss_rate_reduction(r, *ref);
    Row row{j.trace, j.cap, policies[j.policy].label, {}, r.to_json(o.timing)};
    row.cells = {o.traces[j.trace], policies[j.policy].label, o.capacities[j.cap], o.mode,
                 std::to_string(caps[j.trace][j.cap]), std::to_string(r.requests), std::to_string(r.hits),
                 std::to_string(r.misses), fmt(r.object_hit_rate()), fmt(r.byte_hit_rate()),
                 std::to_string(r.evictions), fmt(mrr), r.ok() ? "ok" : "runtime_fail"};
    if (o.timing) row.cells.push_back(fmt(r.wall_time_ms));
    row.obj["trace"] = o.traces[j.trace];
    row.obj["capacity_spec"] = o.capacities[j.cap];
    row.obj["capacity"] = caps[j.trace][j.cap];
    row.obj["mode"] = o.mode;
    row.obj["mrr_vs_fifo"] = mrr;
    rows.push_back(std::move(row));
  }
  // Canonical order: trace, capacity (as given), policy label.
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.trace, a.cap, a.policy) < std::tie(b.trace, b.cap, b.policy);
  });
  bool any_fail = false;
  for (const auto& r : rows)
    if (r.cells[12] != "ok") {
      any_fail = true;
      std::cerr << "warning: " << r.policy << " failed on " << r.cells[0] << ": " << r.obj.value("error", "") << '\n';
    }

  std::string text;
  if (o.format == "json") {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(r.obj);
    text = arr.dump(2) + "\n";
  } else {
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) cells.push_back(r.cells);
    text = o.format == "csv" ? csv_table(header, cells) : text_table(header, cells);
  }
  emit(o.output, text);
  return any_fail ? 1 : 0;
}

// ---------------------------------------------------------------------------
// report best-counts

struct ResultRow {
  std::string trace, policy, capacity;
  double hit_rate = 0.0;
};

std::vector<ResultRow> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  std::vector<ResultRow> rows;
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '[') {
    for (const auto& r : json::parse(content))
      rows.push_back({r.at("trace").get<std::string>(), r.at("policy").get<std::string>(),
                      r.at("capacity_spec").get<std::string>(), r.at("object_hit_rate").get<double>()});
    return rows;
  }
  std::istringstream lines(content);
  std::string line;
  if (!std::getline(lines, line)) return rows;
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("results file lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ct = col("trace"), cp = col("policy"), cc = col("capacity_spec"), ch = col("object_hit_rate");
  while (std::getline(lines, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) throw std::runtime_error("short row in results: " + line);
    rows.push_back({f[ct], f[cp], f[cc], std::stod(f[ch])});
  }
  return rows;
}

struct BestCounts {
  std::vector<std::string> capacities;  // first-seen order
  std::vector<std::string> policies;    // first-seen order
  std::map<std::pair<std::string, std::string>, std::size_t> counts;  // (capacity, policy)
  std::map<std::string, std::size_t> trace_count;
};

BestCounts best_counts(const std::vector<ResultRow>& rows) {
  BestCounts out;
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> by_cap;  // cap -> trace -> policy
  std::map<std::string, std::map<std::string, std::set<std::string>>> cover;         // cap -> policy -> traces
  for (const auto& r : rows) {
    if (std::find(out.capacities.begin(), out.capacities.end(), r.capacity) == out.capacities.end())
      out.capacities.push_back(r.capacity);
    if (std::find(out.policies.begin(), out.policies.end(), r.policy) == out.policies.end())
      out.policies.push_back(r.policy);
    if (!by_cap[r.capacity][r.trace].emplace(r.policy, r.hit_rate).second)
      throw std::runtime_error("duplicate result for " + r.policy + " on " + r.trace + " at " + r.capacity);
    cover[r.capacity][r.policy].insert(r.trace);
  }
  if (out.policies.size() < 2) throw std::runtime_error("best-counts needs results for at least two policies");
  for (const auto& [cap, per_policy] : cover) {
    if (per_policy.size() != out.policies.size())
      throw std::runtime_error("capacity " + cap + " lacks results for some policies");
    const auto& ref = per_policy.begin()->second;
    for (const auto& [policy, traces] : per_policy)
      if (traces != ref) throw std::runtime_error("policies cover different trace sets at capacity " + cap);
  }
  for (const auto& [cap, per_trace] : by_cap) {
    out.trace_count[cap] = per_trace.size();
    for (const auto& [trace, per_policy] : per_trace) {
      double best = -1.0;
      for (const auto& [p, h] : per_policy) best = std::max(best, h);
      for (const auto& [p, h] : per_policy)
        if (h == best) ++out.counts[{cap, p}];
    }
  }
  return out;
}

int cmd_report_best_counts(const std::string& results, const std::string& format, const std::string& output) {
  if (format != "csv" && format != "text") throw UsageError("unknown format '" + format + "'");
  const BestCounts bc = best_counts(read_results(results));
  if (format == "csv") {
    std::vector<std::vector<std::string>> rows;
    for (const auto& cap : bc.capacities)
      for (const auto& p : bc.policies) {
        const auto it = bc.counts.find({cap, p});
        rows.push_back({cap, p, std::to_string(it == bc.counts.end() ? 0 : it->second),
                        std::to_string(bc.trace_count.at(cap))});
      }
    emit(output, csv_table({"capacity_spec", "policy", "best_count", "traces"}, rows));
  } else {
    std::vector<std::string> header = {"policy"};
    for (const auto& cap : bc.capacities) header.push_back(cap + " (" + std::to_string(bc.trace_count.at(cap)) + ")");
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : bc.policies) {
      std::vector<std::string> r = {p};
      for (const auto& cap : bc.capacities) {
        const auto it = bc.counts.find({cap, p});
        r.push_back(std::to_string(it == bc.counts.end() ? 0 : it->second));
      }
      rows.push_back(std::move(r));
    }
    emit(output, text_table(header, rows));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// search

struct SearchOpts {
  std::vector<std::string> traces;
  std::string capacity = "large";
  std::string mode = "size_agnostic";
  std::string mechanism = "pq";
  std::string target = "rank";
  std::string seed_program;
  std::string seed_topology;
  std::string generator = "mutation";
  std::size_t rounds = 10;
  std::size_t per_round = 25;
  std::size_t exemplars = 2;
  std::size_t plateau_window = 5;
  double plateau_epsilon = 0.001;
  std::string objective = "object_hit_rate";
  double weight_hit_rate = 1.0;
  double weight_mrr = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t eval_budget = 0;
  std::size_t workers = 1;
  std::string db = "candidates.jsonl";
  std::string llm_url = "http://127.0.0.1:8000/v1/chat/completions";
  std::string llm_model = "default";
  double temperature = 0.8;
  std::string api_key_env = "EVICTLAB_API_KEY";
  std::string replay_mode = "off";
  std::string replay_file;
  int max_attempts = 5;
};

int cmd_search(const SearchOpts& o) {
  el::SearchConfig cfg;
  cfg.candidates_per_round = o.per_round;
  cfg.exemplar_count = o.exemplars;
  cfg.max_rounds = o.rounds;
  cfg.plateau_window = o.plateau_window;
  cfg.plateau_epsilon = o.plateau_epsilon;
  cfg.mechanism = resolve_mechanism(o.mechanism);
  try {
    cfg.objective = el::parse_objective(o.objective);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfg.weight_hit_rate = o.weight_hit_rate;
  cfg.weight_mrr = o.weight_mrr;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  cfg.db_path = o.db;
  const el::CacheMode mode = parse_mode(o.mode);

  el::Template tmpl;
  if (o.target == "rank") {
    cfg.target = el::SearchTarget::rank_score;
    tmpl = el::default_rank_template();
    if (!o.seed_program.empty()) tmpl.seeds = {el::read_text_file(o.seed_program)};
  } else if (o.target == "topology") {
    cfg.target = el::SearchTarget::topology;
    if (o.seed_topology.empty()) throw UsageError("--target topology needs --seed-topology");
    if (mode != el::CacheMode::size_agnostic) throw UsageError("topology search needs --mode size_agnostic");
    tmpl = el::default_topology_template(el::Topology::load(o.seed_topology).to_json().dump());
  } else {
    throw UsageError("unknown search target '" + o.target + "'");
  }

  for (const auto& path : o.traces) {
    auto trace = std::make_shared<const el::Trace>(load_trace(path));
    el::CacheConfig cache{resolve_capacity(o.capacity, *trace, mode), mode, 4096, o.seed, o.eval_budget};
    cfg.instances.push_back({path, std::move(trace), cache});
  }

  std::unique_ptr<el::ChatClient> client;
  std::unique_ptr<el::Generator> gen;
  if (o.generator == "mutation") {
    gen = std::make_unique<el::MutationGenerator>(cfg.target, o.seed);
  } else if (o.generator == "llm") {
    el::ChatConfig cc;
    cc.url = o.llm_url;
    cc.model = o.llm_model;
    cc.temperature = o.temperature;
    cc.api_key_env = o.api_key_env;
    cc.max_attempts = o.max_attempts;
    cc.replay_path = o.replay_file;
    if (o.replay_mode == "off")
      cc.replay_mode = el::ReplayMode::off;
    else if (o.replay_mode == "record")
      cc.replay_mode = el::ReplayMode::record;
    else if (o.replay_mode == "replay")
      cc.replay_mode = el::ReplayMode::replay;
    else
      throw UsageError("unknown replay mode '" + o.replay_mode + "'");
    if (cc.replay_mode != el::ReplayMode::off && cc.replay_path.empty())
      throw UsageError("--replay-mode needs --replay-file");
    client = std::make_unique<el::ChatClient>(cc);
    gen = std::make_unique<el::LlmGenerator>(*client);
  } else {
    throw UsageError("unknown generator '" + o.generator + "'");
  }

  const el::SearchResult res = el::run_search(cfg, tmpl, *gen);
  std::size_t ok = 0;
  for (const auto& c : res.db) ok += c.ok();
  std::cerr << "rounds: " << res.rounds_completed << ", candidates: " << res.db.size() << ", ok: " << ok
            << ", stop: " << res.stop_reason << '\n';
  if (const el::Candidate* best = res.best_candidate()) {
    std::cout << "best_id " << best->id << "\nobjective " << fmt(*best->objective) << "\nsource\n"
              << best->source << '\n';
  } else {
    std::cout << "no valid candidate\n";
  }
  if (res.stop_reason == "generator_error") {
    std::cerr << "error: generator unavailable: " << res.error << " (partial DB kept at " << o.db << ")\n";
    return 1;
  }
  return res.best ? 0 : 1;
}

// ---------------------------------------------------------------------------
// cluster / classify / features

std::vector<el::FeatureVector> features_of(const std::vector<std::string>& traces, std::size_t prefix,
                                           std::size_t workers) {
  std::vector<el::FeatureVector> out(traces.size());
  parallel_for(traces.size(), workers, [&](std::size_t i) {
    out[i] = el::extract_features(load_trace(traces[i]), prefix);
  });
  return out;
}

int cmd_cluster(const std::vector<std::string>& traces, std::size_t k, std::uint64_t seed, std::size_t prefix,
                std::size_t max_iters, double novelty, const std::string& model_path,
                const std::string& assignments_path, std::size_t workers) {
  if (k == 0) throw UsageError("--k must be >= 1");
  if (k > traces.size()) throw UsageError("--k exceeds the number of traces");
  const auto feats = features_of(traces, prefix, workers);
  el::KMeansOptions opts;
  opts.max_iters = max_iters;
  opts.novelty_factor = novelty;
  el::ClusterModel m = el::kmeans(feats, k, seed, opts);
  json j = m.to_json();
  j["prefix"] = prefix;
  emit(model_path, j.dump(2) + "\n");
  if (!assignments_path.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < traces.size(); ++i) rows.push_back({traces[i], std::to_string(m.assignments[i])});
    emit(assignments_path, csv_table({"trace", "cluster"}, rows));
  }
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : m.assignments) ++sizes[a];
  std::cout << "cluster,size\n";
  for (std::size_t c = 0; c < k; ++c) std::cout << c << ',' << sizes[c] << '\n';
  return 0;
}

int cmd_classify(const std::string& model_path, const std::vector<std::string>& traces, std::size_t prefix_override) {
  std::ifstream in(model_path);
  if (!in) throw std::runtime_error("cannot open model '" + model_path + "'");
  const json j = json::parse(in);
  const el::ClusterModel m = el::ClusterModel::from_json(j);
  if (m.feature_version != el::kFeatureVersion)
    throw std::runtime_error("model feature version '" + m.feature_version + "' is not supported");
  const std::size_t prefix = prefix_override ? prefix_override : j.value("prefix", std::size_t{50'000});
  for (const auto& t : traces) {
    const auto c = el::classify(m, el::extract_features(load_trace(t), prefix));
    const std::string label = c.novel ? "novel" : std::to_string(c.cluster);
    if (traces.size() == 1)
      std::cout << label << '\n';
    else
      std::cout << t << ',' << label << '\n';
  }
  return 0;
}

int cmd_features(const std::vector<std::string>& traces, std::size_t prefix, const std::string& output,
                 std::size_t workers) {
  const auto feats = features_of(traces, prefix, workers);
  std::vector<std::string> header = {"trace"};
  for (const char* n : el::feature_list()) header.emplace_back(n);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::vector<std::string> r = {traces[i]};
    for (double v : feats[i]) r.push_back(fmt(v));
    rows.push_back(std::move(r));
  }
  emit(output, csv_table(header, rows));
  return 0;
}

// ---------------------------------------------------------------------------
// gen

el::SizeModel parse_size_model(const std::string& s) {
  if (s.rfind("const:", 0) == 0) {
    std::uint64_t v = 0;
    if (!el::detail::parse_u64(s.substr(6), v) || v == 0) throw UsageError("bad constant size '" + s + "'");
    return el::ConstantSize{v};
  }
  if (s.rfind("lognormal:", 0) == 0) {
    const std::string rest = s.substr(10);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw UsageError("lognormal size needs mu,sigma");
    try {
      return el::LognormalSize{std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1))};
    } catch (const std::exception&) {
      throw UsageError("bad lognormal size '" + s + "'");
    }
  }
  throw UsageError("unknown size model '" + s + "' (use const:N or lognormal:mu,sigma)");
}

el::SizeModel size_from_json(const json& j) {
  if (!j.contains("size")) return el::ConstantSize{1};
  const json& s = j.at("size");
  if (s.is_number_unsigned()) return el::ConstantSize{s.get<std::uint64_t>()};
  if (s.contains("lognormal")) return el::LognormalSize{s.at("lognormal").at(0).get<double>(), s.at("lognormal").at(1).get<double>()};
  return el::ConstantSize{s.at("constant").get<std::uint64_t>()};
}

/// Phase list JSON: [{"type": "zipf"|"scan"|"loop", "length": N, ...}, ...].
std::vector<el::Phase> phases_from_json(const json& arr) {
  std::vector<el::Phase> out;
  for (const auto& p : arr) {
    const std::string type = p.at("type").get<std::string>();
    el::Phase ph;
    ph.length = p.at("length").get<std::uint64_t>();
    if (type == "zipf") {
      ph.generator = el::ZipfSpec{p.at("num_objects").get<std::uint64_t>(), p.at("alpha").get<double>(),
                                  size_from_json(p), p.value("id_offset", el::ObjectId{0})};
    } else if (type == "scan") {
      ph.generator = el::ScanSpec{size_from_json(p), p.value("id_offset", el::ObjectId{1'000'000'000})};
    } else if (type == "loop") {
      ph.generator = el::LoopSpec{p.at("working_set").get<std::uint64_t>(), size_from_json(p),
                                  p.value("id_offset", el::ObjectId{2'000'000'000})};
    } else {
      throw UsageError("unknown phase type '" + type + "'");
    }
    out.push_back(std::move(ph));
  }
  return out;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const std::string& path, const std::string& kind, bool topology, std::size_t num_queues) {
  const std::string src = el::read_text_file(path);
  if (topology) {
    try {
      const el::Topology t = el::Topology::from_json(json::parse(src));
      std::cout << "ok topology with " << t.num_queues() << " queues\n";
      return 0;
    } catch (const std::exception& e) {
      std::cout << "fail: " << e.what() << '\n';
      return 1;
    }
  }
  el::ContextKind k;
  if (kind == "rank_score")
    k = el::ContextKind::rank_score;
  else if (kind == "qt_init")
    k = el::ContextKind::qt_init;
  else if (kind == "qt_transition")
    k = el::ContextKind::qt_transition;
  else
    throw UsageError("unknown program kind '" + kind + "'");
  const auto report = el::dsl::validate_source(src, k, {num_queues});
  if (report.ok()) {
    const auto ast = el::dsl::parse_expression(src);
    std::cout << "ok nodes=" << el::dsl::node_count(ast) << " depth=" << el::dsl::depth(ast) << '\n'
              << el::dsl::print(ast) << '\n';
    return 0;
  }
  for (const auto& issue : report.issues) std::cout << "fail " << el::dsl::to_string(issue.reason) << ": " << issue.message << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evictlab: cache eviction policy simulation, clustering and search"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evictlab 1.0");

  SimulateOpts sim;
  auto* s = app.add_subcommand("simulate", "Replay traces under policies and emit a result table");
  add_config(s);
  s->add_option("--trace", sim.traces, "Trace CSV (repeatable)")->required();
  s->add_option("--policy", sim.policies, "builtin:<name>, dsl:<path> or topology:<path>, optionally ;mechanism=...")
      ->required();
  s->add_option("--capacity", sim.capacities, "abs:N, frac:x, tiny, small or large (repeatable)")->capture_default_str();
  s->add_option("--mode", sim.mode, "size_aware or size_agnostic")->capture_default_str();
  s->add_option("--mechanism", sim.mechanism, "pq, fullsort or samplesort:S")->capture_default_str();
  s->add_option("--history", sim.history, "Eviction-history capacity")->capture_default_str();
  s->add_option("--seed", sim.seed, "Seed for sampling mechanisms")->capture_default_str();
  s->add_option("--eval-budget", sim.eval_budget, "Program node evaluations allowed per run (0 = unlimited)");
  s->add_option("--format", sim.format, "csv, json or text")->capture_default_str();
  s->add_option("--output,-o", sim.output, "Output file (default stdout)");
  s->add_flag("--timing", sim.timing, "Include wall time per run");
  s->add_option("--workers", sim.workers, "Parallel runs")->capture_default_str();

  auto* r = app.add_subcommand("report", "Summaries over simulate results");
  r->require_subcommand(1);
  std::string rep_results, rep_format = "text", rep_output;
  auto* bc = r->add_subcommand("best-counts", "Per-policy count of traces where it attains the best hit rate");
  add_config(bc);
  bc->add_option("--results", rep_results, "CSV or JSON written by simulate")->required();
  bc->add_option("--format", rep_format, "csv or text")->capture_default_str();
  bc->add_option("--output,-o", rep_output, "Output file (default stdout)");

  SearchOpts so;
  auto* se = app.add_subcommand("search", "Evolutionary search for an eviction heuristic");
  add_config(se);
  se->add_option("--trace", so.traces, "Evaluation trace (repeatable)")->required();
  se->add_option("--capacity", so.capacity, "Capacity spec")->capture_default_str();
  se->add_option("--mode", so.mode, "size_aware or size_agnostic")->capture_default_str();
  se->add_option("--mechanism", so.mechanism, "Rank mechanism")->capture_default_str();
  se->add_option("--target", so.target, "rank or topology")->capture_default_str();
  se->add_option("--seed-program", so.seed_program, "Seed scoring program file (default: vtime)");
  se->add_option("--seed-topology", so.seed_topology, "Seed topology JSON (topology target)");
  se->add_option("--generator", so.generator, "mutation or llm")->capture_default_str();
  se->add_option("--rounds", so.rounds, "Maximum rounds")->capture_default_str();
  se->add_option("--per-round", so.per_round, "Candidates per round")->capture_default_str();
  se->add_option("--exemplars", so.exemplars, "Exemplars carried between rounds")->capture_default_str();
  se->add_option("--plateau-window", so.plateau_window, "Plateau window in rounds (0 disables)")->capture_default_str();
  se->add_option("--plateau-epsilon", so.plateau_epsilon, "Minimum gain over the window")->capture_default_str();
  se->add_option("--objective", so.objective, "object_hit_rate, mrr_vs_fifo or weighted")->capture_default_str();
  se->add_option("--weight-hit-rate", so.weight_hit_rate, "Weight of hit rate in the weighted objective");
  se->add_option("--weight-mrr", so.weight_mrr, "Weight of MRR in the weighted objective");
  se->add_option("--seed", so.seed, "Search seed")->capture_default_str();
  se->add_option("--eval-budget", so.eval_budget, "Program node evaluations allowed per run (0 = unlimited)");
  se->add_option("--workers", so.workers, "Parallel candidate evaluations")->capture_default_str();
  se->add_option("--db", so.db, "Candidate database (JSONL)")->capture_default_str();
  se->add_option("--llm-url", so.llm_url, "Chat-completions URL")->capture_default_str();
  se->add_option("--llm-model", so.llm_model, "Model name")->capture_default_str();
  se->add_option("--temperature", so.temperature, "Sampling temperature")->capture_default_str();
  se->add_option("--api-key-env", so.api_key_env, "Environment variable holding the API key")->capture_default_str();
  se->add_option("--replay-mode", so.replay_mode, "off, record or replay")->capture_default_str();
  se->add_option("--replay-file", so.replay_file, "JSONL of recorded replies");
  se->add_option("--max-attempts", so.max_attempts, "HTTP attempts per completion")->capture_default_str();

  std::vector<std::string> cl_traces;
  std::size_t cl_k = 10, cl_prefix = 50'000, cl_iters = 300, workers = 1;
  std::uint64_t cl_seed = 0;
  double cl_novelty = 1.5;
  std::string cl_model = "model.json", cl_assign;
  auto* c = app.add_subcommand("cluster", "k-means over trace feature vectors");
  add_config(c);
  c->add_option("traces", cl_traces, "Trace CSVs")->required();
  c->add_option("--k", cl_k, "Number of clusters")->capture_default_str();
  c->add_option("--seed", cl_seed, "Seed")->capture_default_str();
  c->add_option("--prefix", cl_prefix, "Requests per trace used for features")->capture_default_str();
  c->add_option("--max-iters", cl_iters, "Lloyd iteration cap")->capture_default_str();
  c->add_option("--novelty-factor", cl_novelty, "Radius multiplier for novelty")->capture_default_str();
  c->add_option("--model", cl_model, "Model output file")->capture_default_str();
  c->add_option("--assignments", cl_assign, "Assignment CSV output (trace,cluster)");
  c->add_option("--workers", workers, "Parallel feature extraction")->capture_default_str();

  std::string cf_model;
  std::vector<std::string> cf_traces;
  std::size_t cf_prefix = 0;
  auto* cf = app.add_subcommand("classify", "Assign traces to a trained model's clusters");
  add_config(cf);
  cf->add_option("--model", cf_model, "Model JSON")->required();
  cf->add_option("traces", cf_traces, "Trace CSVs")->required();
  cf->add_option("--prefix", cf_prefix, "Override the model's feature prefix");

  std::vector<std::string> ft_traces;
  std::size_t ft_prefix = 50'000;
  std::string ft_output;
  auto* ft = app.add_subcommand("features", "Emit feature vectors as CSV");
  add_config(ft);
  ft->add_option("traces", ft_traces, "Trace CSVs")->required();
  ft->add_option("--prefix", ft_prefix, "Requests per trace")->capture_default_str();
  ft->add_option("--output,-o", ft_output, "Output file (default stdout)");
  ft->add_option("--workers", workers, "Parallel extraction")->capture_default_str();

  auto* g = app.add_subcommand("gen", "Generate synthetic traces");
  g->require_subcommand(1);
  std::uint64_t gz_objects = 1000, gz_requests = 100'000, g_seed = 0;
  double gz_alpha = 1.0;
  std::string gz_size = "const:1", g_output, gp_spec;
  auto* gz = g->add_subcommand("zipf", "Zipf popularity trace");
  add_config(gz);
  gz->add_option("--objects", gz_objects, "Distinct objects")->capture_default_str();
  gz->add_option("--requests", gz_requests, "Requests")->capture_default_str();
  gz->add_option("--alpha", gz_alpha, "Zipf exponent")->capture_default_str();
  gz->add_option("--size", gz_size, "const:N or lognormal:mu,sigma")->capture_default_str();
  gz->add_option("--seed", g_seed, "Seed")->capture_default_str();
  gz->add_option("--output,-o", g_output, "Output CSV (default stdout)");
  auto* gp = g->add_subcommand("phases", "Concatenation of zipf/scan/loop phases");
  add_config(gp);
  gp->add_option("--spec", gp_spec, "Phase list JSON file")->required();
  gp->add_option("--seed", g_seed, "Seed")->capture_default_str();
  gp->add_option("--output,-o", g_output, "Output CSV (default stdout)");

  std::string v_file, v_kind = "rank_score";
  bool v_topology = false;
  std::size_t v_queues = 5;
  auto* v = app.add_subcommand("validate", "Parse and validate a program or topology");
  v->add_option("file", v_file, "Program or topology file")->required();
  v->add_option("--kind", v_kind, "rank_score, qt_init or qt_transition")->capture_default_str();
  v->add_flag("--topology", v_topology, "Treat the file as a topology JSON");
  v->add_option("--num-queues", v_queues, "Queue count for routing programs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (bc->parsed()) return cmd_report_best_counts(rep_results, rep_format, rep_output);
    if (se->parsed()) return cmd_search(so);
    if (c->parsed())
      return cmd_cluster(cl_traces, cl_k, cl_seed, cl_prefix, cl_iters, cl_novelty, cl_model, cl_assign, workers);
    if (cf->parsed()) return cmd_classify(cf_model, cf_traces, cf_prefix);
    if (ft->parsed()) return cmd_features(ft_traces, ft_prefix, ft_output, workers);
    if (gz->parsed()) {
      std::ostringstream out;
      el::write_csv_trace(out, el::generate_zipf_trace(gz_objects, gz_requests, gz_alpha, parse_size_model(gz_size), g_seed));
      emit(g_output, out.str());
      return 0;
    }
    if (gp->parsed()) {
      std::ifstream in(gp_spec);
      if (!in) throw std::runtime_error("cannot open phase spec '" + gp_spec + "'");
      std::ostringstream out;
      el::write_csv_trace(out, el::generate_phase_trace(phases_from_json(json::parse(in)), g_seed));
      emit(g_output, out.str());
      return 0;
    }
    if (v->parsed()) return cmd_validate(v_file, v_kind, v_topology, v_queues);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
