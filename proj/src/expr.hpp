#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "floatcodec.hpp"

namespace misode {

enum class ExprKind {
  Add,       // binary
  Mul,       // binary
  Sin,       // unary
  Square,    // unary
  Inverse,   // unary
  Identity,  // unary
  Constant,  // leaf
  Variable,  // leaf
};

inline int arity(ExprKind k) {
  switch (k) {
    case ExprKind::Add:
    case ExprKind::Mul:
      return 2;
    case ExprKind::Sin:
    case ExprKind::Square:
    case ExprKind::Inverse:
    case ExprKind::Identity:
      return 1;
    default:
      return 0;
  }
}

// One node of an ODE right-hand side. Constants are kept at full double
// precision; rounding to the 4-significant-digit token grid happens only when
// a tree is serialized.
class Expr {
 public:
  Expr() : kind_(ExprKind::Constant), value_(0.0) {}

  static Expr constant(double v);
  static Expr variable(int index);
  static Expr unary(ExprKind k, Expr child);
  static Expr binary(ExprKind k, Expr lhs, Expr rhs);

  ExprKind kind() const { return kind_; }
  double value() const { return value_; }
  int var_index() const { return var_index_; }
  const std::vector<Expr>& children() const { return children_; }
  std::vector<Expr>& children() { return children_; }

  // Value at x; singular points (e.g. inverse(0)) propagate IEEE non-finite
  // values instead of aborting. Throws std::invalid_argument when a variable
  // index is out of range for x.
  double eval(std::span<const double> x) const;

  int max_var_index() const;  // -1 when no variable occurs
  int count_kind(ExprKind k) const;
  int depth() const;  // single node = 0

  bool operator==(const Expr& other) const;

 private:
  ExprKind kind_;
  double value_ = 0.0;
  int var_index_ = 0;
  std::vector<Expr> children_;
};

// Structural equality with constants compared on the token grid: two trees are
// equivalent iff they serialize to the same prefix tokens.
bool structurally_equal(const Expr& a, const Expr& b);

struct OdeSystem {
  int dim = 0;
  std::vector<Expr> equations;  // equations[i] = f_i, dx_i/dt = f_i(x)

  bool valid() const;
  // f(x) for all dimensions.
  std::vector<double> eval(std::span<const double> x) const;
};

bool structurally_equal(const OdeSystem& a, const OdeSystem& b);

// Prefix (Polish) serialization. Dimensions appear in order 0..D-1 separated
// by "<sep>"; each constant becomes "<const>" followed by its sign, mantissa
// and exponent tokens.
std::vector<std::string> to_prefix(const Expr& e);
std::vector<std::string> to_prefix(const OdeSystem& s);

// Strict inverse of to_prefix. Malformed input (unknown token, arity
// underflow/overflow, bad constant triple, variable index >= dim, wrong number
// of <sep> segments) yields nullopt with a diagnostic in *error.
std::optional<OdeSystem> parse_prefix(std::span<const std::string> tokens, int dim,
                                      std::string* error = nullptr);
std::optional<Expr> parse_prefix_expr(std::span<const std::string> tokens, int dim,
                                      std::string* error = nullptr);

// Human-readable rendering, e.g. "dx0/dt = 1.5*x0*x1^2". Not parsed back.
std::string to_infix(const Expr& e);
std::string render_system(const OdeSystem& s);

}  // namespace misode
