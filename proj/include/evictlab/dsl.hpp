#ifndef EVICTLAB_DSL_HPP
#define EVICTLAB_DSL_HPP

// Sandboxed scoring/routing expression language.
//
//   expr    := 'if' expr 'then' expr 'else' expr
//            | 'let' IDENT '=' expr 'in' expr
//            | or
//   or      := and ('or' and)*
//   and     := not ('and' not)*
//   not     := 'not' not | cmp
//   cmp     := sum (('<'|'<='|'>'|'>='|'=='|'!=') sum)?
//   sum     := term (('+'|'-') term)*
//   term    := unary (('*'|'/') unary)*
//   unary   := '-' unary | primary
//   primary := NUMBER | IDENT | IDENT '(' [expr (',' expr)*] ')' | '(' expr ')'
//
// Identifiers may contain dots (obj.count). '#' starts a comment. Booleans are
// the numbers 1 and 0. There are no loops, so every evaluation terminates, and
// every operator is total: evaluation never faults and never yields NaN.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evictlab {

enum class ContextKind { rank_score, qt_init, qt_transition };

inline std::string_view to_string(ContextKind k) {
  switch (k) {
    case ContextKind::rank_score: return "rank_score";
    case ContextKind::qt_init: return "qt_init";
    case ContextKind::qt_transition: return "qt_transition";
  }
  return "?";
}

/// Aggregate statistic families exposed through percentile(stat, p).
enum class Stat { counts, ages, sizes };

namespace dsl {

// ---------------------------------------------------------------------------
// AST

enum class NodeKind : std::uint8_t { number, ident, neg, not_, binary, if_, let, call };

enum class BinOp : std::uint8_t { add, sub, mul, div, lt, le, gt, ge, eq, ne, and_, or_ };

/// Value-semantic AST node. Copying clones the subtree; == is structural.
struct Expr {
  NodeKind kind = NodeKind::number;
  double number = 0.0;
  BinOp op = BinOp::add;
  std::string name;  // identifier, let-bound name, or callee
  std::vector<Expr> args;

  friend bool operator==(const Expr&, const Expr&) = default;

  static Expr num(double v) { return Expr{NodeKind::number, v, BinOp::add, {}, {}}; }
  static Expr ident(std::string n) { return Expr{NodeKind::ident, 0.0, BinOp::add, std::move(n), {}}; }
  static Expr neg(Expr e) { return Expr{NodeKind::neg, 0.0, BinOp::add, {}, {std::move(e)}}; }
  static Expr not_(Expr e) { return Expr{NodeKind::not_, 0.0, BinOp::add, {}, {std::move(e)}}; }
  static Expr binary(BinOp op, Expr l, Expr r) {
    return Expr{NodeKind::binary, 0.0, op, {}, {std::move(l), std::move(r)}};
  }
  static Expr if_(Expr c, Expr t, Expr e) {
    return Expr{NodeKind::if_, 0.0, BinOp::add, {}, {std::move(c), std::move(t), std::move(e)}};
  }
  static Expr let(std::string n, Expr v, Expr body) {
    return Expr{NodeKind::let, 0.0, BinOp::add, std::move(n), {std::move(v), std::move(body)}};
  }
  static Expr call(std::string n, std::vector<Expr> a) {
    return Expr{NodeKind::call, 0.0, BinOp::add, std::move(n), std::move(a)};
  }
};

inline std::size_t node_count(const Expr& e) {
  std::size_t n = 1;
  for (const auto& a : e.args) n += node_count(a);
  return n;
}

inline std::size_t depth(const Expr& e) {
  std::size_t d = 0;
  for (const auto& a : e.args) d = std::max(d, depth(a));
  return d + 1;
}

inline std::string_view op_token(BinOp op) {
  switch (op) {
    case BinOp::add: return "+";
    case BinOp::sub: return "-";
    case BinOp::mul: return "*";
    case BinOp::div: return "/";
    case BinOp::lt: return "<";
    case BinOp::le: return "<=";
    case BinOp::gt: return ">";
    case BinOp::ge: return ">=";
    case BinOp::eq: return "==";
    case BinOp::ne: return "!=";
    case BinOp::and_: return "and";
    case BinOp::or_: return "or";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Errors and validation reports

enum class Reason {
  syntax_error,
  unknown_identifier,
  unknown_function,
  wrong_context,
  bad_arity,
  bad_stat_argument,
  node_cap,
  depth_cap,
  no_valid_output,
};

inline std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::syntax_error: return "syntax_error";
    case Reason::unknown_identifier: return "unknown_identifier";
    case Reason::unknown_function: return "unknown_function";
    case Reason::wrong_context: return "wrong_context";
    case Reason::bad_arity: return "bad_arity";
    case Reason::bad_stat_argument: return "bad_stat_argument";
    case Reason::node_cap: return "node_cap";
    case Reason::depth_cap: return "depth_cap";
    case Reason::no_valid_output: return "no_valid_output";
  }
  return "?";
}

struct Issue {
  Reason reason;
  std::string message;
};

struct ValidationReport {
  std::vector<Issue> issues;

  bool ok() const { return issues.empty(); }
  bool has(Reason r) const {
    for (const auto& i : issues)
      if (i.reason == r) return true;
    return false;
  }
  std::string summary() const {
    std::string s;
    for (const auto& i : issues) {
      if (!s.empty()) s += "; ";
      s += std::string(to_string(i.reason)) + ": " + i.message;
    }
    return s;
  }
};

class DslError : public std::runtime_error {
 public:
  DslError(Reason reason, const std::string& what, std::size_t pos = 0)
      : std::runtime_error(what), reason_(reason), pos_(pos) {}
  Reason reason() const noexcept { return reason_; }
  /// Byte offset into the source for syntax errors.
  std::size_t position() const noexcept { return pos_; }

 private:
  Reason reason_;
  std::size_t pos_;
};

inline constexpr std::size_t kMaxNodes = 10'000;
inline constexpr std::size_t kMaxDepth = 1'000;
inline constexpr std::size_t kMaxLetDepth = 256;
// Grammar recursion per tree level is at most a few frames; the tree depth cap is exact.
inline constexpr std::size_t kMaxParseNesting = 4 * kMaxDepth;
inline constexpr double kSaturate = 1e308;

// ---------------------------------------------------------------------------
// Binding surface per context kind

namespace rank_slot {
inline constexpr int vtime = 0, count = 1, last_access_vtime = 2, addition_vtime = 3, size = 4,
                     aging = 5, num = 6;
}
namespace init_slot {
inline constexpr int vtime = 0, in_ghost = 1, obj_size = 2, num_queues = 3, num = 4;
}
namespace trans_slot {
inline constexpr int vtime = 0, cache_access_count = 1, queue_access_count = 2, cache_insertion_vtime = 3,
                     queue_insertion_vtime = 4, last_access_vtime = 5, current_queue = 6, num_queues = 7,
                     num = 8;
}

inline std::span<const std::string_view> feature_names(ContextKind k) {
  static constexpr std::array<std::string_view, rank_slot::num> rank = {
      "vtime", "obj.count", "obj.last_access_vtime", "obj.addition_vtime", "obj.size", "L_aging"};
  static constexpr std::array<std::string_view, init_slot::num> init = {"vtime", "in_ghost", "obj_size",
                                                                        "num_queues"};
  static constexpr std::array<std::string_view, trans_slot::num> trans = {
      "vtime",
      "obj.cache_access_count",
      "obj.queue_access_count",
      "obj.cache_insertion_vtime",
      "obj.queue_insertion_vtime",
      "obj.last_access_vtime",
      "obj.current_queue",
      "num_queues"};
  switch (k) {
    case ContextKind::rank_score: return rank;
    case ContextKind::qt_init: return init;
    case ContextKind::qt_transition: return trans;
  }
  return {};
}

inline std::optional<int> feature_slot(ContextKind k, std::string_view name) {
  const auto names = feature_names(k);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

enum class Fn : std::uint8_t {
  min, max, abs, floor, log, exp, pow, clamp, percentile, ghost_contains, ghost_count, ghost_age, is_full
};

struct FunctionInfo {
  std::string_view name;
  Fn fn;
  int arity;
  unsigned kinds;  // bit per ContextKind
};

inline constexpr unsigned kind_bit(ContextKind k) { return 1u << static_cast<unsigned>(k); }
inline constexpr unsigned kAllKinds = 0b111;

inline std::span<const FunctionInfo> functions() {
  constexpr unsigned rank = kind_bit(ContextKind::rank_score);
  constexpr unsigned init = kind_bit(ContextKind::qt_init);
  static constexpr std::array<FunctionInfo, 13> table = {{
      {"min", Fn::min, 2, kAllKinds},
      {"max", Fn::max, 2, kAllKinds},
      {"abs", Fn::abs, 1, kAllKinds},
      {"floor", Fn::floor, 1, kAllKinds},
      {"log", Fn::log, 1, kAllKinds},
      {"exp", Fn::exp, 1, kAllKinds},
      {"pow", Fn::pow, 2, kAllKinds},
      {"clamp", Fn::clamp, 3, kAllKinds},
      {"percentile", Fn::percentile, 2, rank},
      {"ghost_contains", Fn::ghost_contains, 0, rank},
      {"ghost_count", Fn::ghost_count, 0, rank},
      {"ghost_age", Fn::ghost_age, 0, rank},
      {"is_full", Fn::is_full, 1, init},
  }};
  return table;
}

inline const FunctionInfo* find_function(std::string_view name) {
  for (const auto& f : functions())
    if (f.name == name) return &f;
  return nullptr;
}

inline std::optional<Stat> stat_from_name(std::string_view s) {
  if (s == "counts") return Stat::counts;
  if (s == "ages") return Stat::ages;
  if (s == "sizes") return Stat::sizes;
  return std::nullopt;
}

inline bool is_keyword(std::string_view s) {
  return s == "if" || s == "then" || s == "else" || s == "let" || s == "in" || s == "and" || s == "or" ||
         s == "not";
}

// ---------------------------------------------------------------------------
// Lexer / parser

namespace detail {

enum class Tok { number, ident, op, lparen, rparen, comma, eof };

struct Token {
  Tok type = Tok::eof;
  std::string_view text;
  double value = 0.0;
  std::size_t pos = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space();
    Token t;
    t.pos = i_;
    if (i_ >= src_.size()) return t;
    const char c = src_[i_];
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i_ + 1 < src_.size() &&
                                                        std::isdigit(static_cast<unsigned char>(src_[i_ + 1])))) {
      return number();
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i_;
      while (j < src_.size()) {
        const char d = src_[j];
        if (std::isalnum(static_cast<unsigned char>(d)) || d == '_') {
          ++j;
        } else if (d == '.' && j + 1 < src_.size() &&
                   (std::isalpha(static_cast<unsigned char>(src_[j + 1])) || src_[j + 1] == '_')) {
          ++j;
        } else {
          break;
        }
      }
      t.type = Tok::ident;
      t.text = src_.substr(i_, j - i_);
      i_ = j;
      return t;
    }
    switch (c) {
      case '(': t.type = Tok::lparen; t.text = src_.substr(i_++, 1); return t;
      case ')': t.type = Tok::rparen; t.text = src_.substr(i_++, 1); return t;
      case ',': t.type = Tok::comma; t.text = src_.substr(i_++, 1); return t;
      case '+': case '-': case '*': case '/':
        t.type = Tok::op; t.text = src_.substr(i_++, 1); return t;
      case '<': case '>': case '=': case '!': {
        t.type = Tok::op;
        if (i_ + 1 < src_.size() && src_[i_ + 1] == '=') {
          t.text = src_.substr(i_, 2);
          i_ += 2;
        } else if (c == '!') {
          throw DslError(Reason::syntax_error, "unexpected '!' at " + std::to_string(i_), i_);
        } else {
          t.text = src_.substr(i_++, 1);
        }
        return t;
      }
      default:
        throw DslError(Reason::syntax_error,
                       "unexpected character '" + std::string(1, c) + "' at " + std::to_string(i_), i_);
    }
  }

 private:
  void skip_space() {
    while (i_ < src_.size()) {
      const char c = src_[i_];
      if (c == '#') {
        while (i_ < src_.size() && src_[i_] != '\n') ++i_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++i_;
      } else {
        break;
      }
    }
  }

  Token number() {
    Token t;
    t.pos = i_;
    t.type = Tok::number;
    std::size_t j = i_;
    auto digits = [&] {
      while (j < src_.size() && std::isdigit(static_cast<unsigned char>(src_[j]))) ++j;
    };
    digits();
    if (j < src_.size() && src_[j] == '.') {
      ++j;
      digits();
    }
    if (j < src_.size() && (src_[j] == 'e' || src_[j] == 'E')) {
      std::size_t k = j + 1;
      if (k < src_.size() && (src_[k] == '+' || src_[k] == '-')) ++k;
      if (k < src_.size() && std::isdigit(static_cast<unsigned char>(src_[k]))) {
        j = k;
        digits();
      }
    }
    t.text = src_.substr(i_, j - i_);
    const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.value);
    if (res.ec == std::errc::result_out_of_range) {
      t.value = kSaturate;
    } else if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
      throw DslError(Reason::syntax_error, "malformed number at " + std::to_string(i_), i_);
    }
    i_ = j;
    return t;
  }

  std::string_view src_;
  std::size_t i_ = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { advance(); }

  Expr parse_program() {
    Expr e = expr();
    if (cur_.type != Tok::eof) fail("unexpected '" + std::string(cur_.text) + "'");
    return e;
  }

 private:
  void advance() { cur_ = lex_.next(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DslError(Reason::syntax_error, msg + " at " + std::to_string(cur_.pos), cur_.pos);
  }

  bool is_word(std::string_view w) const { return cur_.type == Tok::ident && cur_.text == w; }
  bool is_op(std::string_view o) const { return cur_.type == Tok::op && cur_.text == o; }

  void expect_word(std::string_view w) {
    if (!is_word(w)) fail("expected '" + std::string(w) + "'");
    advance();
  }

  Expr count(Expr e) {
    if (++nodes_ > kMaxNodes)
      throw DslError(Reason::node_cap, "program exceeds " + std::to_string(kMaxNodes) + " nodes", cur_.pos);
    return e;
  }

  struct NestGuard {
    explicit NestGuard(Parser& p) : p_(p) {
      if (++p_.nesting_ > kMaxParseNesting)
        throw DslError(Reason::depth_cap, "nesting exceeds " + std::to_string(kMaxDepth), p_.cur_.pos);
    }
    ~NestGuard() { --p_.nesting_; }
    Parser& p_;
  };

  Expr expr() {
    NestGuard g(*this);
    if (is_word("if")) {
      advance();
      Expr c = expr();
      expect_word("then");
      Expr t = expr();
      expect_word("else");
      Expr e = expr();
      return count(Expr::if_(std::move(c), std::move(t), std::move(e)));
    }
    if (is_word("let")) {
      advance();
      if (cur_.type != Tok::ident || is_keyword(cur_.text)) fail("expected identifier after 'let'");
      std::string name(cur_.text);
      advance();
      if (!is_op("=")) fail("expected '='");
      advance();
      Expr v = expr();
      expect_word("in");
      Expr body = expr();
      return count(Expr::let(std::move(name), std::move(v), std::move(body)));
    }
    return or_expr();
  }

  Expr or_expr() {
    Expr l = and_expr();
    while (is_word("or")) {
      advance();
      l = count(Expr::binary(BinOp::or_, std::move(l), and_expr()));
    }
    return l;
  }

  Expr and_expr() {
    Expr l = not_expr();
    while (is_word("and")) {
      advance();
      l = count(Expr::binary(BinOp::and_, std::move(l), not_expr()));
    }
    return l;
  }

  Expr not_expr() {
    if (is_word("not")) {
      NestGuard g(*this);
      advance();
      return count(Expr::not_(not_expr()));
    }
    return cmp_expr();
  }

  Expr cmp_expr() {
    Expr l = sum_expr();
    if (cur_.type == Tok::op) {
      std::optional<BinOp> op;
      if (cur_.text == "<") op = BinOp::lt;
      else if (cur_.text == "<=") op = BinOp::le;
      else if (cur_.text == ">") op = BinOp::gt;
      else if (cur_.text == ">=") op = BinOp::ge;
      else if (cur_.text == "==") op = BinOp::eq;
      else if (cur_.text == "!=") op = BinOp::ne;
      if (op) {
        advance();
        l = count(Expr::binary(*op, std::move(l), sum_expr()));
      }
    }
    return l;
  }

  Expr sum_expr() {
    Expr l = term_expr();
    while (is_op("+") || is_op("-")) {
      const BinOp op = cur_.text == "+" ? BinOp::add : BinOp::sub;
      advance();
      l = count(Expr::binary(op, std::move(l), term_expr()));
    }
    return l;
  }

  Expr term_expr() {
    Expr l = unary_expr();
    while (is_op("*") || is_op("/")) {
      const BinOp op = cur_.text == "*" ? BinOp::mul : BinOp::div;
      advance();
      l = count(Expr::binary(op, std::move(l), unary_expr()));
    }
    return l;
  }

  Expr unary_expr() {
    if (is_op("-")) {
      NestGuard g(*this);
      advance();
      Expr inner = unary_expr();
      // Negated literals fold so that the printer's "(-5)" round-trips.
      if (inner.kind == NodeKind::number) {
        inner.number = -inner.number;
        return inner;
      }
      return count(Expr::neg(std::move(inner)));
    }
    return primary();
  }

  Expr primary() {
    if (cur_.type == Tok::number) {
      const double v = cur_.value;
      advance();
      return count(Expr::num(v));
    }
    if (cur_.type == Tok::lparen) {
      advance();
      Expr e = expr();
      if (cur_.type != Tok::rparen) fail("expected ')'");
      advance();
      return e;
    }
    if (cur_.type == Tok::ident) {
      if (is_keyword(cur_.text)) fail("unexpected keyword '" + std::string(cur_.text) + "'");
      std::string name(cur_.text);
      advance();
      if (cur_.type != Tok::lparen) return count(Expr::ident(std::move(name)));
      NestGuard g(*this);
      advance();
      std::vector<Expr> args;
      if (cur_.type != Tok::rparen) {
        args.push_back(expr());
        while (cur_.type == Tok::comma) {
          advance();
          args.push_back(expr());
        }
      }
      if (cur_.type != Tok::rparen) fail("expected ')' or ','");
      advance();
      return count(Expr::call(std::move(name), std::move(args)));
    }
    if (cur_.type == Tok::eof) fail("unexpected end of input");
    fail("unexpected '" + std::string(cur_.text) + "'");
  }

  Lexer lex_;
  Token cur_;
  std::size_t nodes_ = 0;
  std::size_t nesting_ = 0;
};

}  // namespace detail

/// Syntax-only parse. Throws DslError (syntax_error or node_cap).
inline Expr parse_expression(std::string_view source) { return detail::Parser(source).parse_program(); }

// ---------------------------------------------------------------------------
// Canonical printer

inline std::string format_number(double v) {
  if (std::isnan(v)) v = 0.0;
  if (v > kSaturate) v = kSaturate;
  if (v < -kSaturate) v = -kSaturate;
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline void print(const Expr& e, std::string& out, bool top) {
  switch (e.kind) {
    case NodeKind::number: {
      const std::string s = format_number(e.number);
      if (s.front() == '-') {
        out += '(';
        out += s;
        out += ')';
      } else {
        out += s;
      }
      return;
    }
    case NodeKind::ident: out += e.name; return;
    case NodeKind::neg:
      out += "(-";
      print(e.args[0], out, false);
      out += ')';
      return;
    case NodeKind::not_:
      out += top ? "not " : "(not ";
      print(e.args[0], out, false);
      if (!top) out += ')';
      return;
    case NodeKind::binary:
      if (!top) out += '(';
      print(e.args[0], out, false);
      out += ' ';
      out += op_token(e.op);
      out += ' ';
      print(e.args[1], out, false);
      if (!top) out += ')';
      return;
    case NodeKind::if_:
      if (!top) out += '(';
      out += "if ";
      print(e.args[0], out, false);
      out += " then ";
      print(e.args[1], out, false);
      out += " else ";
      print(e.args[2], out, false);
      if (!top) out += ')';
      return;
    case NodeKind::let:
      if (!top) out += '(';
      out += "let " + e.name + " = ";
      print(e.args[0], out, false);
      out += " in ";
      print(e.args[1], out, top);
      if (!top) out += ')';
      return;
    case NodeKind::call:
      out += e.name;
      out += '(';
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) out += ", ";
        print(e.args[i], out, true);
      }
      out += ')';
      return;
  }
}

}  // namespace detail

/// Canonical text. parse_expression(print(e)) == e for every parser-produced e.
inline std::string print(const Expr& e) {
  std::string out;
  detail::print(e, out, true);
  return out;
}

// ---------------------------------------------------------------------------
// Compiled form and evaluation

enum class Op : std::uint8_t {
  constant, feature, local, neg, not_, add, sub, mul, div, lt, le, gt, ge, eq, ne, and_, or_, if_, let,
  min, max, abs, floor, log, exp, pow, clamp, percentile, ghost_contains, ghost_count, ghost_age, is_full
};

struct Instr {
  Op op = Op::constant;
  double imm = 0.0;
  std::int32_t slot = 0;  // feature slot, local slot, or Stat
  std::array<std::int32_t, 3> kid{-1, -1, -1};
};

/// Non-feature inputs a program may query. Default implementations model an
/// empty cache with no history.
class EvalHooks {
 public:
  virtual ~EvalHooks() = default;
  virtual double percentile(Stat, double) const { return 0.0; }
  virtual bool ghost_contains() const { return false; }
  virtual double ghost_count() const { return 0.0; }
  virtual double ghost_age() const { return 0.0; }
  virtual bool is_full(std::int64_t) const { return false; }
};

struct EvalContext {
  std::span<const double> features;
  const EvalHooks* hooks = nullptr;
};

inline double sanitize(double v) {
  if (std::isnan(v)) return 0.0;
  if (v > kSaturate) return kSaturate;
  if (v < -kSaturate) return -kSaturate;
  return v;
}

}  // namespace dsl

/// A validated, compiled program for one context kind. Immutable once built.
class ScoreProgram {
 public:
  const std::string& source() const { return source_; }
  const dsl::Expr& ast() const { return ast_; }
  ContextKind kind() const { return kind_; }
  std::size_t node_count() const { return nodes_; }
  std::size_t max_depth() const { return depth_; }
  /// Canonical printed form.
  std::string canonical() const { return dsl::print(ast_); }

  double evaluate(const dsl::EvalContext& ctx) const {
    std::array<double, dsl::kMaxLetDepth> locals{};
    return eval(0, ctx, locals);
  }

 private:
  friend ScoreProgram make_program(dsl::Expr ast, ContextKind kind, std::string source, std::size_t num_queues);

  double feature(const dsl::EvalContext& ctx, std::int32_t slot) const {
    const auto i = static_cast<std::size_t>(slot);
    return i < ctx.features.size() ? dsl::sanitize(ctx.features[i]) : 0.0;
  }

  double eval(std::int32_t at, const dsl::EvalContext& ctx, std::array<double, dsl::kMaxLetDepth>& loc) const {
    using dsl::Op;
    using dsl::sanitize;
    const dsl::Instr& n = code_[static_cast<std::size_t>(at)];
    auto k = [&](int i) { return eval(n.kid[static_cast<std::size_t>(i)], ctx, loc); };
    static const dsl::EvalHooks fallback;
    const dsl::EvalHooks& hooks = ctx.hooks ? *ctx.hooks : fallback;
    switch (n.op) {
      case Op::constant: return n.imm;
      case Op::feature: return feature(ctx, n.slot);
      case Op::local: return loc[static_cast<std::size_t>(n.slot)];
      case Op::neg: return sanitize(-k(0));
      case Op::not_: return k(0) == 0.0 ? 1.0 : 0.0;
      case Op::add: return sanitize(k(0) + k(1));
      case Op::sub: return sanitize(k(0) - k(1));
      case Op::mul: return sanitize(k(0) * k(1));
      case Op::div: {
        const double a = k(0), b = k(1);
        return b == 0.0 ? 0.0 : sanitize(a / b);
      }
      case Op::lt: return k(0) < k(1) ? 1.0 : 0.0;
      case Op::le: return k(0) <= k(1) ? 1.0 : 0.0;
      case Op::gt: return k(0) > k(1) ? 1.0 : 0.0;
      case Op::ge: return k(0) >= k(1) ? 1.0 : 0.0;
      case Op::eq: return k(0) == k(1) ? 1.0 : 0.0;
      case Op::ne: return k(0) != k(1) ? 1.0 : 0.0;
      case Op::and_: return (k(0) != 0.0 && k(1) != 0.0) ? 1.0 : 0.0;
      case Op::or_: return (k(0) != 0.0 || k(1) != 0.0) ? 1.0 : 0.0;
      case Op::if_: return k(0) != 0.0 ? k(1) : k(2);
      case Op::let:
        loc[static_cast<std::size_t>(n.slot)] = k(0);
        return k(1);
      case Op::min: return std::min(k(0), k(1));
      case Op::max: return std::max(k(0), k(1));
      case Op::abs: return std::abs(k(0));
      case Op::floor: return std::floor(k(0));
      case Op::log: {
        const double a = k(0);
        return a <= 0.0 ? 0.0 : sanitize(std::log(a));
      }
      case Op::exp: return sanitize(std::exp(k(0)));
      case Op::pow: return sanitize(std::pow(k(0), k(1)));
      case Op::clamp: return std::min(std::max(k(0), k(1)), k(2));
      case Op::percentile: {
        const double p = std::clamp(k(0), 0.0, 1.0);
        return sanitize(hooks.percentile(static_cast<Stat>(n.slot), p));
      }
      case Op::ghost_contains: return hooks.ghost_contains() ? 1.0 : 0.0;
      case Op::ghost_count: return sanitize(hooks.ghost_count());
      case Op::ghost_age: return sanitize(hooks.ghost_age());
      case Op::is_full: {
        const double q = std::round(k(0));
        if (q < 0.0 || q > 1e9) return 0.0;
        return hooks.is_full(static_cast<std::int64_t>(q)) ? 1.0 : 0.0;
      }
    }
    return 0.0;
  }

  std::string source_;
  dsl::Expr ast_;
  ContextKind kind_ = ContextKind::rank_score;
  std::size_t nodes_ = 0;
  std::size_t depth_ = 0;
  std::vector<dsl::Instr> code_;
};

namespace dsl {

struct ValidateOptions {
  /// Queue count used by the routing-range check for qt kinds.
  std::size_t num_queues = 5;
};

namespace detail {

class Checker {
 public:
  Checker(ContextKind kind, ValidationReport& report) : kind_(kind), report_(report) {}

  void run(const Expr& e) { walk(e); }

 private:
  void add(Reason r, std::string msg) {
    if (report_.issues.size() < 16) report_.issues.push_back({r, std::move(msg)});
  }

  void walk(const Expr& e) {
    switch (e.kind) {
      case NodeKind::number: return;
      case NodeKind::ident: {
        for (auto it = scope_.rbegin(); it != scope_.rend(); ++it)
          if (*it == e.name) return;
        if (feature_slot(kind_, e.name)) return;
        for (auto other : {ContextKind::rank_score, ContextKind::qt_init, ContextKind::qt_transition}) {
          if (feature_slot(other, e.name)) {
            add(Reason::wrong_context, "'" + e.name + "' is not available in " + std::string(to_string(kind_)));
            return;
          }
        }
        add(Reason::unknown_identifier, "unknown identifier '" + e.name + "'");
        return;
      }
      case NodeKind::let:
        if (scope_.size() >= kMaxLetDepth) {
          add(Reason::depth_cap, "too many nested let bindings");
          return;
        }
        walk(e.args[0]);
        scope_.push_back(e.name);
        walk(e.args[1]);
        scope_.pop_back();
        return;
      case NodeKind::call: {
        const FunctionInfo* f = find_function(e.name);
        if (!f) {
          add(Reason::unknown_function, "unknown function '" + e.name + "'");
          return;
        }
        if (!(f->kinds & kind_bit(kind_))) {
          add(Reason::wrong_context,
              "function '" + e.name + "' is not available in " + std::string(to_string(kind_)));
          return;
        }
        if (static_cast<int>(e.args.size()) != f->arity) {
          add(Reason::bad_arity, "'" + e.name + "' takes " + std::to_string(f->arity) + " argument(s)");
          return;
        }
        if (f->fn == Fn::percentile) {
          if (e.args[0].kind != NodeKind::ident || !stat_from_name(e.args[0].name)) {
            add(Reason::bad_stat_argument, "percentile's first argument must be counts, ages or sizes");
          }
          walk(e.args[1]);
          return;
        }
        for (const auto& a : e.args) walk(a);
        return;
      }
      default:
        for (const auto& a : e.args) walk(a);
        return;
    }
  }

  ContextKind kind_;
  ValidationReport& report_;
  std::vector<std::string> scope_;
};

class Compiler {
 public:
  explicit Compiler(ContextKind kind) : kind_(kind) {}

  std::vector<Instr> compile(const Expr& e) {
    emit(e);
    return std::move(code_);
  }

 private:
  std::int32_t emit(const Expr& e) {
    const auto at = static_cast<std::int32_t>(code_.size());
    code_.emplace_back();
    Instr ins;
    switch (e.kind) {
      case NodeKind::number: ins.op = Op::constant; ins.imm = sanitize(e.number); break;
      case NodeKind::ident: {
        bool found = false;
        for (std::size_t i = scope_.size(); i-- > 0;) {
          if (scope_[i] == e.name) {
            ins.op = Op::local;
            ins.slot = static_cast<std::int32_t>(i);
            found = true;
            break;
          }
        }
        if (!found) {
          ins.op = Op::feature;
          ins.slot = *feature_slot(kind_, e.name);
        }
        break;
      }
      case NodeKind::neg: ins.op = Op::neg; ins.kid[0] = emit(e.args[0]); break;
      case NodeKind::not_: ins.op = Op::not_; ins.kid[0] = emit(e.args[0]); break;
      case NodeKind::binary:
        ins.op = static_cast<Op>(static_cast<int>(Op::add) + static_cast<int>(e.op));
        ins.kid[0] = emit(e.args[0]);
        ins.kid[1] = emit(e.args[1]);
        break;
      case NodeKind::if_:
        ins.op = Op::if_;
        for (int i = 0; i < 3; ++i) ins.kid[static_cast<std::size_t>(i)] = emit(e.args[static_cast<std::size_t>(i)]);
        break;
      case NodeKind::let:
        ins.op = Op::let;
        ins.kid[0] = emit(e.args[0]);
        ins.slot = static_cast<std::int32_t>(scope_.size());
        scope_.push_back(e.name);
        ins.kid[1] = emit(e.args[1]);
        scope_.pop_back();
        break;
      case NodeKind::call: {
        const FunctionInfo* f = find_function(e.name);
        ins.op = static_cast<Op>(static_cast<int>(Op::min) + static_cast<int>(f->fn));
        if (f->fn == Fn::percentile) {
          ins.slot = static_cast<std::int32_t>(*stat_from_name(e.args[0].name));
          ins.kid[0] = emit(e.args[1]);
        } else {
          for (std::size_t i = 0; i < e.args.size(); ++i) ins.kid[i] = emit(e.args[i]);
        }
        break;
      }
    }
    code_[static_cast<std::size_t>(at)] = ins;
    return at;
  }

  ContextKind kind_;
  std::vector<Instr> code_;
  std::vector<std::string> scope_;
};

class ProbeHooks : public EvalHooks {
 public:
  explicit ProbeHooks(unsigned full_mask) : full_mask_(full_mask) {}
  bool is_full(std::int64_t q) const override { return q >= 0 && q < 32 && ((full_mask_ >> q) & 1u); }

 private:
  unsigned full_mask_;
};

}  // namespace detail

/// Does a rounded routing result land in the accepted range for the kind?
inline bool routing_in_range(ContextKind kind, double v, std::size_t num_queues) {
  const double r = std::round(v);
  const double hi = static_cast<double>(num_queues) - 1.0;
  if (kind == ContextKind::qt_init) return r >= 0.0 && r <= hi;
  return r >= -2.0 && r <= hi;
}

}  // namespace dsl

namespace dsl::detail {
inline bool probe_routing(const ScoreProgram& p, std::size_t num_queues);
}

/// Validates and compiles an AST for a context kind. Throws DslError carrying
/// the first failing reason.
inline ScoreProgram make_program(dsl::Expr ast, ContextKind kind, std::string source = {},
                                 std::size_t num_queues = 5);

namespace dsl {

/// Structural checks (bindings, arity, caps). Does not run the routing-range
/// probe; see validate().
inline ValidationReport check(const Expr& e, ContextKind kind) {
  ValidationReport report;
  const std::size_t n = node_count(e);
  if (n > kMaxNodes) {
    report.issues.push_back(
        {Reason::node_cap, std::to_string(n) + " nodes exceeds cap of " + std::to_string(kMaxNodes)});
    return report;
  }
  if (depth(e) > kMaxDepth) {
    report.issues.push_back({Reason::depth_cap, "expression nesting exceeds " + std::to_string(kMaxDepth)});
    return report;
  }
  detail::Checker(kind, report).run(e);
  return report;
}

}  // namespace dsl

inline ScoreProgram make_program(dsl::Expr ast, ContextKind kind, std::string source, std::size_t num_queues) {
  const dsl::ValidationReport report = dsl::check(ast, kind);
  if (!report.ok()) throw dsl::DslError(report.issues.front().reason, report.summary());
  ScoreProgram p;
  p.nodes_ = dsl::node_count(ast);
  p.depth_ = dsl::depth(ast);
  p.code_ = dsl::detail::Compiler(kind).compile(ast);
  p.kind_ = kind;
  p.source_ = source.empty() ? dsl::print(ast) : std::move(source);
  p.ast_ = std::move(ast);
  if (kind != ContextKind::rank_score && !dsl::detail::probe_routing(p, num_queues)) {
    throw dsl::DslError(dsl::Reason::no_valid_output,
                        "no_valid_output: program never yields a queue index in range for any probed input");
  }
  return p;
}

namespace dsl::detail {

// Probe the routing program over a grid of inputs; it must produce an in-range
// index for at least one of them.
inline bool probe_routing(const ScoreProgram& p, std::size_t num_queues) {
  const std::size_t m = std::clamp<std::size_t>(num_queues, 1, 5);
  if (p.kind() == ContextKind::qt_init) {
    for (double vtime : {0.0, 1e6})
      for (double in_ghost : {0.0, 1.0})
        for (double size : {1.0, 4096.0})
          for (unsigned mask = 0; mask < (1u << m); ++mask) {
            const std::array<double, init_slot::num> f{vtime, in_ghost, size, static_cast<double>(m)};
            ProbeHooks hooks(mask);
            if (routing_in_range(p.kind(), p.evaluate({f, &hooks}), m)) return true;
          }
    return false;
  }
  for (double vtime : {0.0, 1e3, 1e6})
    for (double cache_count : {0.0, 1.0, 5.0})
      for (double queue_count : {0.0, 1.0, 2.0, 5.0})
        for (double age : {0.0, 100.0, 1e6})
          for (std::size_t q = 0; q < m; ++q) {
            const double ins = std::max(0.0, vtime - age);
            const std::array<double, trans_slot::num> f{vtime, cache_count, queue_count, ins,
                                                        ins,   vtime,       static_cast<double>(q),
                                                        static_cast<double>(m)};
            if (routing_in_range(p.kind(), p.evaluate({f, nullptr}), m)) return true;
          }
  return false;
}

}  // namespace dsl::detail

/// Parses and validates source text for a context kind. Throws DslError on
/// syntax errors, unbound identifiers/functions, or cap violations.
inline ScoreProgram parse_program(std::string_view source, ContextKind kind, std::size_t num_queues = 5) {
  dsl::Expr ast = dsl::parse_expression(source);
  return make_program(std::move(ast), kind, std::string(source), num_queues);
}

namespace dsl {

/// Full validation report for an AST: structural checks plus, for routing
/// kinds, the in-range probe. Never throws.
inline ValidationReport validate(const Expr& e, ContextKind kind, const ValidateOptions& opts = {}) {
  ValidationReport report = check(e, kind);
  if (!report.ok()) return report;
  if (kind != ContextKind::rank_score) {
    try {
      (void)make_program(e, kind, {}, opts.num_queues);
    } catch (const DslError& err) {
      report.issues.push_back({err.reason(), err.what()});
    }
  }
  return report;
}

inline ValidationReport validate(const ScoreProgram& p, const ValidateOptions& opts = {}) {
  return validate(p.ast(), p.kind(), opts);
}

/// Parse + validate to a report; syntax failures become a syntax_error issue.
inline ValidationReport validate_source(std::string_view source, ContextKind kind,
                                        const ValidateOptions& opts = {}) {
  try {
    return validate(parse_expression(source), kind, opts);
  } catch (const DslError& err) {
    ValidationReport r;
    r.issues.push_back({err.reason(), err.what()});
    return r;
  }
}

}  // namespace dsl

}  // namespace evictlab

#endif  // EVICTLAB_DSL_HPP
