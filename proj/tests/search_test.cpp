#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evictlab/search.hpp"
#include "support.hpp"

using namespace evictlab;

namespace {

SearchConfig small_config(std::uint64_t seed = 1) {
  SearchConfig cfg;
  auto trace = std::make_shared<const Trace>(generate_phase_trace(
      {{ZipfSpec{500, 1.0, ConstantSize{1}, 0}, 3000}, {ScanSpec{ConstantSize{1}, 1'000'000}, 800}}, 5));
  CacheConfig cache;
  cache.capacity = 60;
  cache.mode = CacheMode::size_agnostic;
  cfg.instances = {{"zipf_scan_small", trace, cache}};
  cfg.candidates_per_round = 8;
  cfg.max_rounds = 4;
  cfg.plateau_window = 0;
  cfg.seed = seed;
  return cfg;
}

std::string dump_db(const SearchResult& r) {
  std::string s;
  for (const auto& c : r.db) s += c.to_json().dump() + "\n";
  return s;
}

/// Returns canned sources, or throws once a call budget is spent.
class ScriptedGenerator : public Generator {
 public:
  ScriptedGenerator(std::vector<std::string> sources, int calls_before_failure = -1)
      : sources_(std::move(sources)), remaining_(calls_before_failure) {}
  std::vector<Generated> generate(const Template&, const std::vector<const Candidate*>& ex, std::size_t n) override {
    if (remaining_ == 0) throw GeneratorUnavailable("endpoint down");
    if (remaining_ > 0) --remaining_;
    seen_exemplars.push_back({});
    for (const auto* c : ex) seen_exemplars.back().push_back(c->id);
    std::vector<Generated> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({sources_[i % sources_.size()], {}, "scripted", false});
    return out;
  }
  std::vector<std::vector<std::uint64_t>> seen_exemplars;

 private:
  std::vector<std::string> sources_;
  int remaining_;
};

}  // namespace

TEST(Mutation, TenThousandChildrenAllValidate) {
  std::mt19937_64 rng(123);
  const std::vector<std::string> parents = {
      "vtime", "obj.count / obj.size + L_aging", "if ghost_contains() then obj.count * 2 else obj.count",
      read_text_file(test_support::data_path("fixtures/ghost_frequency_score.dsl"))};
  std::vector<dsl::Expr> asts;
  for (const auto& p : parents) asts.push_back(dsl::parse_expression(p));
  std::size_t changed = 0;
  for (int i = 0; i < 10'000; ++i) {
    const auto& parent = asts[static_cast<std::size_t>(i) % asts.size()];
    const auto& donor = asts[static_cast<std::size_t>(i * 7 + 1) % asts.size()];
    const MutationResult r = mutate(parent, ContextKind::rank_score, rng, &donor);
    ASSERT_TRUE(dsl::validate(r.expr, ContextKind::rank_score).ok()) << dsl::print(r.expr);
    ASSERT_EQ(dsl::print(dsl::parse_expression(dsl::print(r.expr))), dsl::print(r.expr));
    if (dsl::print(r.expr) != dsl::print(parent)) ++changed;
  }
  EXPECT_GT(changed, 9000u);
}

TEST(Mutation, RoutingChildrenStayInRange) {
  std::mt19937_64 rng(5);
  const dsl::Expr init = dsl::parse_expression("if in_ghost then 1 else 0");
  const dsl::Expr trans = dsl::parse_expression("if obj.queue_access_count >= 1 then 1 else -1");
  for (int i = 0; i < 2000; ++i) {
    const auto a = mutate(init, ContextKind::qt_init, rng, nullptr, {2, 256, 10});
    ASSERT_TRUE(dsl::validate(a.expr, ContextKind::qt_init, {2}).ok()) << dsl::print(a.expr);
    const auto b = mutate(trans, ContextKind::qt_transition, rng, nullptr, {2, 256, 10});
    ASSERT_TRUE(dsl::validate(b.expr, ContextKind::qt_transition, {2}).ok()) << dsl::print(b.expr);
  }
}

TEST(Mutation, SoftNodeCapFallsBackToParent) {
  std::mt19937_64 rng(1);
  const dsl::Expr big = dsl::parse_expression(read_text_file(test_support::data_path("fixtures/ghost_frequency_score.dsl")));
  MutationOptions opts;
  opts.soft_node_cap = 0;  // every child exceeds it
  const MutationResult r = mutate(big, ContextKind::rank_score, rng, nullptr, opts);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(dsl::print(r.expr), dsl::print(big));
}

TEST(Mutation, SeededStreamIsReproducible) {
  const dsl::Expr p = dsl::parse_expression("obj.count / obj.size + L_aging");
  std::mt19937_64 a(77), b(77);
  for (int i = 0; i < 200; ++i)
    EXPECT_EQ(dsl::print(mutate(p, ContextKind::rank_score, a).expr),
              dsl::print(mutate(p, ContextKind::rank_score, b).expr));
}

TEST(Search, DeterministicAcrossRunsAndWorkerCounts) {
  SearchConfig cfg = small_config(3);
  MutationGenerator g1(SearchTarget::rank_score, 3);
  const SearchResult a = run_search(cfg, default_rank_template(), g1);
  cfg.workers = 4;
  MutationGenerator g2(SearchTarget::rank_score, 3);
  const SearchResult b = run_search(cfg, default_rank_template(), g2);
  EXPECT_EQ(dump_db(a), dump_db(b));
  EXPECT_EQ(a.best_history, b.best_history);
  ASSERT_EQ(a.db.size(), 1u + 4 * 8);
  EXPECT_EQ(a.stop_reason, "max_rounds");
  for (std::size_t i = 1; i < a.best_history.size(); ++i) EXPECT_GE(a.best_history[i], a.best_history[i - 1]);
  for (std::size_t i = 0; i < a.db.size(); ++i) {
    EXPECT_EQ(a.db[i].id, i);
    EXPECT_EQ(a.db[i].round, i == 0 ? 0 : (i - 1) / 8 + 1);
  }
  EXPECT_EQ(a.db[0].lineage, "seed");
  EXPECT_EQ(a.db[1].lineage, "mutation");
}

TEST(Search, DatabaseFileMirrorsResultAndIsTruncated) {
  const auto path = std::filesystem::temp_directory_path() / "evictlab_search_db_test.jsonl";
  { std::ofstream(path) << "stale line\n"; }
  SearchConfig cfg = small_config();
  cfg.db_path = path.string();
  MutationGenerator gen(SearchTarget::rank_score, 1);
  const SearchResult r = run_search(cfg, default_rank_template(), gen);
  std::ifstream in(path);
  std::string line, all;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("id").get<std::uint64_t>(), rows);
    ++rows;
    all += line + "\n";
  }
  EXPECT_EQ(rows, r.db.size());
  EXPECT_EQ(all, dump_db(r));
  std::filesystem::remove(path);
}

TEST(Search, FailuresAreRecordedWithReasons) {
  SearchConfig cfg = small_config();
  cfg.max_rounds = 1;
  cfg.candidates_per_round = 5;
  ScriptedGenerator gen({"obj.count +", "obj.nope", "percentile(heights, 1)", "obj.count", "1 / 0"});
  const SearchResult r = run_search(cfg, default_rank_template(), gen);
  ASSERT_EQ(r.db.size(), 6u);
  EXPECT_EQ(r.db[1].status, CandidateStatus::parse_fail);
  EXPECT_EQ(r.db[1].reason, "syntax_error");
  EXPECT_EQ(r.db[2].status, CandidateStatus::validate_fail);
  EXPECT_EQ(r.db[2].reason, "unknown_identifier");
  EXPECT_EQ(r.db[3].reason, "bad_stat_argument");
  EXPECT_TRUE(r.db[4].ok());
  EXPECT_TRUE(r.db[5].ok());
  EXPECT_FALSE(r.db[1].objective.has_value());

  cfg.instances[0].cache.eval_budget = 100;
  ScriptedGenerator gen2({"obj.count"});
  const SearchResult f = run_search(cfg, default_rank_template(), gen2);
  EXPECT_EQ(f.db[1].status, CandidateStatus::runtime_fail);
  EXPECT_EQ(f.db[1].reason, "runtime_fault");
}

TEST(Search, AllFailingRoundsFallBackToSeedExemplars) {
  SearchConfig cfg = small_config();
  cfg.max_rounds = 3;
  Template tmpl = default_rank_template();
  tmpl.seeds = {"obj.nope"};  // even the seed is invalid
  ScriptedGenerator gen({"((("});
  const SearchResult r = run_search(cfg, tmpl, gen);
  EXPECT_FALSE(r.best.has_value());
  EXPECT_EQ(r.rounds_completed, 3u);
  for (const auto& ex : gen.seen_exemplars) EXPECT_EQ(ex, (std::vector<std::uint64_t>{0}));
  for (const auto& c : r.db) EXPECT_FALSE(c.ok());
}

TEST(Search, ExemplarsAreGlobalTopKWithIdTieBreak) {
  std::vector<Candidate> db(5);
  const double obj[5] = {0.1, 0.5, 0.5, 0.3, 0.9};
  for (std::size_t i = 0; i < 5; ++i) {
    db[i].id = i;
    db[i].status = CandidateStatus::ok;
    db[i].objective = obj[i];
  }
  db[4].status = CandidateStatus::runtime_fail;
  const auto ex = select_exemplars(db, 2);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0]->id, 1u);
  EXPECT_EQ(ex[1]->id, 2u);
}

TEST(Search, GeneratorErrorStopsAndKeepsPartialDatabase) {
  SearchConfig cfg = small_config();
  ScriptedGenerator gen({"obj.count"}, 2);
  const SearchResult r = run_search(cfg, default_rank_template(), gen);
  EXPECT_EQ(r.stop_reason, "generator_error");
  EXPECT_EQ(r.rounds_completed, 2u);
  EXPECT_EQ(r.db.size(), 1u + 2 * 8);
  EXPECT_NE(r.error.find("endpoint down"), std::string::npos);
}

TEST(Search, PlateauAndTargetStopRules) {
  SearchConfig cfg = small_config();
  cfg.max_rounds = 10;
  cfg.plateau_window = 2;
  ScriptedGenerator same({"vtime"});  // never improves on the seed
  const SearchResult p = run_search(cfg, default_rank_template(), same);
  EXPECT_EQ(p.stop_reason, "plateau");
  EXPECT_EQ(p.rounds_completed, 2u);

  cfg.plateau_window = 0;
  cfg.target_objective = 0.0;
  ScriptedGenerator any({"vtime"});
  const SearchResult t = run_search(cfg, default_rank_template(), any);
  EXPECT_EQ(t.stop_reason, "target");
  EXPECT_EQ(t.rounds_completed, 0u);
}

TEST(Search, ObjectivesUseFifoBaseline) {
  SearchConfig cfg = small_config();
  cfg.max_rounds = 0;
  cfg.objective = ObjectiveKind::mrr_vs_fifo;
  Template tmpl = default_rank_template();
  tmpl.seeds = {"obj.addition_vtime"};  // FIFO itself
  ScriptedGenerator gen({"vtime"});
  const SearchResult r = run_search(cfg, tmpl, gen);
  ASSERT_TRUE(r.db[0].ok());
  EXPECT_EQ(*r.db[0].objective, 0.0);
  EXPECT_THROW(parse_objective("speed"), std::invalid_argument);
}

TEST(Search, TopologyTargetMutatesSlotsAndStaysValid) {
  SearchConfig cfg = small_config();
  cfg.target = SearchTarget::topology;
  cfg.max_rounds = 3;
  const std::string seed = read_text_file(test_support::data_path("fixtures/twoq_topology.json"));
  MutationGenerator gen(SearchTarget::topology, 9);
  const SearchResult r = run_search(cfg, default_topology_template(seed), gen);
  EXPECT_EQ(r.db.size(), 1u + 3 * 8);
  for (const auto& c : r.db) {
    EXPECT_TRUE(c.ok()) << c.source << " " << c.error;
    EXPECT_NO_THROW(Topology::from_json(nlohmann::json::parse(c.source)));
  }
}

TEST(Search, LlmGeneratorExtractsCodeFromReplayedReplies) {
  const auto path = std::filesystem::temp_directory_path() / "evictlab_replay_test.jsonl";
  {
    std::ofstream out(path);
    for (int i = 0; i < 25; ++i) {
      std::string reply = i % 5 == 4 ? "I cannot help." : "Here:\n```python\nobj.count + " + std::to_string(i) + "\n```\n";
      out << nlohmann::json{{"request", nlohmann::json::object()}, {"reply", reply}}.dump() << "\n";
    }
  }
  ChatConfig cc;
  cc.replay_mode = ReplayMode::replay;
  cc.replay_path = path.string();
  ChatClient client(cc);
  LlmGenerator gen(client);
  SearchConfig cfg = small_config();
  cfg.candidates_per_round = 25;
  cfg.max_rounds = 2;
  const SearchResult r = run_search(cfg, default_rank_template(), gen);
  // Round 1 consumes all 25 replies; round 2 hits the end of the file.
  EXPECT_EQ(r.stop_reason, "generator_error");
  ASSERT_EQ(r.db.size(), 26u);
  std::size_t no_block = 0;
  for (std::size_t i = 1; i < r.db.size(); ++i) {
    if (r.db[i].reason == "no_code_block") {
      ++no_block;
      EXPECT_EQ(r.db[i].status, CandidateStatus::parse_fail);
    } else {
      EXPECT_TRUE(r.db[i].ok()) << r.db[i].source;
      EXPECT_EQ(r.db[i].lineage, "llm");
    }
  }
  EXPECT_EQ(no_block, 5u);
  EXPECT_EQ(r.db[1].source, "obj.count + 0");
  std::filesystem::remove(path);
}

TEST(Prompt, CarriesTemplateAndExemplars) {
  Candidate c;
  c.id = 4;
  c.source = "obj.count";
  c.status = CandidateStatus::ok;
  c.objective = 0.5;
  const auto msgs = build_prompt(default_rank_template(), {&c});
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, "system");
  EXPECT_NE(msgs[1].content.find("obj.count"), std::string::npos);
  EXPECT_NE(msgs[1].content.find("0.5"), std::string::npos);
  EXPECT_NE(msgs[1].content.find("L_aging"), std::string::npos);
}
