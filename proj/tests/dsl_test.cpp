#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "evictlab/dsl.hpp"

using namespace evictlab;
using dsl::Reason;

namespace {

double eval_rank(const std::string& src, std::array<double, dsl::rank_slot::num> f = {},
                 const dsl::EvalHooks* hooks = nullptr) {
  const ScoreProgram p = parse_program(src, ContextKind::rank_score);
  return p.evaluate({f, hooks});
}

Reason reason_of(const std::string& src, ContextKind kind = ContextKind::rank_score) {
  try {
    parse_program(src, kind);
  } catch (const dsl::DslError& e) {
    return e.reason();
  }
  ADD_FAILURE() << "accepted: " << src;
  return Reason::syntax_error;
}

struct FixedHooks : dsl::EvalHooks {
  double percentile(Stat s, double p) const override { return static_cast<double>(static_cast<int>(s)) * 100 + p; }
  bool ghost_contains() const override { return true; }
  double ghost_count() const override { return 7; }
  double ghost_age() const override { return 300; }
};

}  // namespace

TEST(DslParse, PrecedenceAndAssociativity) {
  EXPECT_DOUBLE_EQ(eval_rank("1 + 2 * 3"), 7);
  EXPECT_DOUBLE_EQ(eval_rank("(1 + 2) * 3"), 9);
  EXPECT_DOUBLE_EQ(eval_rank("10 - 4 - 3"), 3);
  EXPECT_DOUBLE_EQ(eval_rank("64 / 4 / 2"), 8);
  EXPECT_DOUBLE_EQ(eval_rank("-2 * 3"), -6);
  EXPECT_DOUBLE_EQ(eval_rank("1 < 2 and 3 > 4 or 1"), 1);
  EXPECT_DOUBLE_EQ(eval_rank("not 1 == 1"), 0);
  EXPECT_DOUBLE_EQ(eval_rank("1 + 1 == 2"), 1);
  EXPECT_DOUBLE_EQ(eval_rank("if 0 then 1 else if 1 then 2 else 3"), 2);
  EXPECT_DOUBLE_EQ(eval_rank("let a = 3 in let b = a * a in b - a"), 6);
  EXPECT_DOUBLE_EQ(eval_rank("1.5e2 + .5"), 150.5);
}

TEST(DslParse, CommentsAndWhitespace) {
  EXPECT_DOUBLE_EQ(eval_rank("# leading\n  1 +  # trailing\n 2\n"), 3);
}

TEST(DslParse, LetShadowing) {
  EXPECT_DOUBLE_EQ(eval_rank("let x = 1 in let x = x + 10 in x"), 11);
  EXPECT_DOUBLE_EQ(eval_rank("let x = 1 in (let x = 5 in x) + x"), 6);
}

TEST(DslEval, FeaturesBindBySlot) {
  std::array<double, dsl::rank_slot::num> f{100, 4, 90, 10, 512, 2.5};
  EXPECT_DOUBLE_EQ(eval_rank("vtime - obj.last_access_vtime", f), 10);
  EXPECT_DOUBLE_EQ(eval_rank("obj.count / obj.size + L_aging", f), 4.0 / 512 + 2.5);
  EXPECT_DOUBLE_EQ(eval_rank("obj.addition_vtime", f), 10);
}

TEST(DslEval, TotalSemantics) {
  EXPECT_EQ(eval_rank("5 / 0"), 0);
  EXPECT_EQ(eval_rank("0 / 0"), 0);
  EXPECT_EQ(eval_rank("log(0)"), 0);
  EXPECT_EQ(eval_rank("log(-3)"), 0);
  EXPECT_DOUBLE_EQ(eval_rank("log(exp(2))"), 2);
  EXPECT_EQ(eval_rank("exp(100000)"), dsl::kSaturate);
  EXPECT_EQ(eval_rank("-exp(100000)"), -dsl::kSaturate);
  EXPECT_EQ(eval_rank("pow(-8, 0.5)"), 0);
  EXPECT_EQ(eval_rank("exp(1000) - exp(1000)"), 0);
  EXPECT_EQ(eval_rank("exp(1000) * exp(1000)"), dsl::kSaturate);
  EXPECT_EQ(eval_rank("exp(1000) * 0"), 0);
  EXPECT_DOUBLE_EQ(eval_rank("clamp(15, 0, 10)"), 10);
  EXPECT_DOUBLE_EQ(eval_rank("floor(-1.5)"), -2);
  EXPECT_DOUBLE_EQ(eval_rank("abs(-3) + min(1, 2) + max(1, 2)"), 6);
  // Non-finite features are sanitized on read.
  std::array<double, dsl::rank_slot::num> f{std::nan(""), INFINITY, -INFINITY, 0, 0, 0};
  EXPECT_EQ(eval_rank("vtime", f), 0);
  EXPECT_EQ(eval_rank("obj.count", f), dsl::kSaturate);
  EXPECT_EQ(eval_rank("obj.last_access_vtime", f), -dsl::kSaturate);
}

TEST(DslEval, HookFunctions) {
  const FixedHooks hooks;
  EXPECT_DOUBLE_EQ(eval_rank("percentile(ages, 0.75)", {}, &hooks), 100 + 0.75);
  EXPECT_DOUBLE_EQ(eval_rank("percentile(sizes, 2)", {}, &hooks), 200 + 1.0);  // p clamps to [0, 1]
  EXPECT_DOUBLE_EQ(eval_rank("percentile(counts, 0.5)", {}, &hooks), 0.5);
  EXPECT_DOUBLE_EQ(eval_rank("ghost_contains() + ghost_count() + ghost_age()", {}, &hooks), 308);
  // Without hooks the program sees an empty cache.
  EXPECT_DOUBLE_EQ(eval_rank("ghost_contains() + percentile(counts, 0.5)"), 0);
}

TEST(DslValidate, ReasonsAreSpecific) {
  EXPECT_EQ(reason_of("1 +"), Reason::syntax_error);
  EXPECT_EQ(reason_of("(1"), Reason::syntax_error);
  EXPECT_EQ(reason_of("1 2"), Reason::syntax_error);
  EXPECT_EQ(reason_of("obj.cout"), Reason::unknown_identifier);
  EXPECT_EQ(reason_of("let x = 1 in y"), Reason::unknown_identifier);
  EXPECT_EQ(reason_of("sqrt(4)"), Reason::unknown_function);
  EXPECT_EQ(reason_of("min(1)"), Reason::bad_arity);
  EXPECT_EQ(reason_of("percentile(heights, 0.5)"), Reason::bad_stat_argument);
  EXPECT_EQ(reason_of("obj.queue_access_count"), Reason::wrong_context);
  EXPECT_EQ(reason_of("is_full(0)"), Reason::wrong_context);
  EXPECT_EQ(reason_of("ghost_count()", ContextKind::qt_transition), Reason::wrong_context);
  EXPECT_EQ(reason_of("obj.count", ContextKind::qt_init), Reason::wrong_context);
}

TEST(DslValidate, Caps) {
  std::string big = "1";
  for (int i = 0; i < 5001; ++i) big += " + 1";
  EXPECT_EQ(reason_of(big), Reason::node_cap);

  auto nested_negations = [](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += "-(";
    s += "obj.count";
    for (int i = 0; i < n; ++i) s += ")";
    return s;
  };
  EXPECT_NO_THROW(parse_program(nested_negations(900), ContextKind::rank_score));
  EXPECT_EQ(reason_of(nested_negations(1001)), Reason::depth_cap);

  std::string lets;
  for (int i = 0; i < 257; ++i) lets += "let v" + std::to_string(i) + " = 1 in ";
  lets += "1";
  EXPECT_EQ(reason_of(lets), Reason::depth_cap);
  std::string ok_lets;
  for (int i = 0; i < 256; ++i) ok_lets += "let v" + std::to_string(i) + " = " + std::to_string(i) + " in ";
  ok_lets += "v255 + v0";
  EXPECT_DOUBLE_EQ(eval_rank(ok_lets), 255);
}

TEST(DslValidate, RoutingProgramsMustReachAValidQueue) {
  EXPECT_EQ(reason_of("7", ContextKind::qt_init), Reason::no_valid_output);
  EXPECT_EQ(reason_of("-5", ContextKind::qt_transition), Reason::no_valid_output);
  EXPECT_NO_THROW(parse_program("-1", ContextKind::qt_transition));
  EXPECT_NO_THROW(parse_program("-2", ContextKind::qt_transition));
  EXPECT_NO_THROW(parse_program("if is_full(0) then 1 else 0", ContextKind::qt_init));
  // Index 2 is out of range with two queues but fine with three.
  EXPECT_THROW(parse_program("2", ContextKind::qt_init, 2), dsl::DslError);
  EXPECT_NO_THROW(parse_program("2", ContextKind::qt_init, 3));
  const auto report = dsl::validate_source("7", ContextKind::qt_init);
  EXPECT_TRUE(report.has(Reason::no_valid_output));
}

TEST(DslPrint, CanonicalFormIsAFixpoint) {
  for (const char* src : {"obj.count / obj.size + L_aging", "-5", "- - 3", "not not 1", "1 - (2 - 3)",
                          "if a_b then 1 else 2", "let x = -1e-3 in x * (-x)", "min(1, max(2, 3))",
                          "percentile(ages, 0.75) < vtime - obj.addition_vtime",
                          "if 1 then let y = 2 in y else 3"}) {
    const dsl::Expr e = dsl::parse_expression(src);  // binding is checked later, so a_b parses
    const std::string once = dsl::print(e);
    const std::string twice = dsl::print(dsl::parse_expression(once));
    EXPECT_EQ(once, twice) << src;
  }
  EXPECT_EQ(dsl::print(dsl::parse_expression("-5")), "(-5)");
  EXPECT_EQ(dsl::print(dsl::parse_expression("1 + 2 * 3")), "1 + (2 * 3)");
}

TEST(DslProgram, MetadataAndKinds) {
  const ScoreProgram p = parse_program("obj.count + 1", ContextKind::rank_score);
  EXPECT_EQ(p.node_count(), 3u);
  EXPECT_EQ(p.kind(), ContextKind::rank_score);
  EXPECT_EQ(p.source(), "obj.count + 1");
  EXPECT_EQ(p.canonical(), "obj.count + 1");
  EXPECT_TRUE(dsl::validate(p).ok());
}
