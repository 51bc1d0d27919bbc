#include "expr.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace misode {

Expr Expr::constant(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("Expr::constant: non-finite value");
  Expr e;
  e.kind_ = ExprKind::Constant;
  e.value_ = v;
  return e;
}

Expr Expr::variable(int index) {
  if (index < 0) throw std::invalid_argument("Expr::variable: negative index");
  Expr e;
  e.kind_ = ExprKind::Variable;
  e.var_index_ = index;
  return e;
}

Expr Expr::unary(ExprKind k, Expr child) {
  if (arity(k) != 1) throw std::invalid_argument("Expr::unary: kind is not unary");
  Expr e;
  e.kind_ = k;
  e.children_.push_back(std::move(child));
  return e;
}

Expr Expr::binary(ExprKind k, Expr lhs, Expr rhs) {
  if (arity(k) != 2) throw std::invalid_argument("Expr::binary: kind is not binary");
  Expr e;
  e.kind_ = k;
  e.children_.push_back(std::move(lhs));
  e.children_.push_back(std::move(rhs));
  return e;
}

double Expr::eval(std::span<const double> x) const {
  switch (kind_) {
    case ExprKind::Constant:
      return value_;
    case ExprKind::Variable:
      if (var_index_ >= static_cast<int>(x.size()))
        throw std::invalid_argument("Expr::eval: variable index exceeds state dimension");
      return x[var_index_];
    case ExprKind::Add:
      return children_[0].eval(x) + children_[1].eval(x);
    case ExprKind::Mul:
      return children_[0].eval(x) * children_[1].eval(x);
    case ExprKind::Sin:
      return std::sin(children_[0].eval(x));
    case ExprKind::Square: {
      const double v = children_[0].eval(x);
      return v * v;
    }
    case ExprKind::Inverse:
      return 1.0 / children_[0].eval(x);
    case ExprKind::Identity:
      return children_[0].eval(x);
  }
  return 0.0;
}

int Expr::max_var_index() const {
  int m = kind_ == ExprKind::Variable ? var_index_ : -1;
  for (const Expr& c : children_) m = std::max(m, c.max_var_index());
  return m;
}

int Expr::count_kind(ExprKind k) const {
  int n = kind_ == k ? 1 : 0;
  for (const Expr& c : children_) n += c.count_kind(k);
  return n;
}

int Expr::depth() const {
  int d = 0;
  for (const Expr& c : children_) d = std::max(d, 1 + c.depth());
  return d;
}

bool Expr::operator==(const Expr& other) const {
  if (kind_ != other.kind_) return false;
  switch (kind_) {
    case ExprKind::Constant:
      if (value_ != other.value_) return false;
      break;
    case ExprKind::Variable:
      if (var_index_ != other.var_index_) return false;
      break;
    default:
      break;
  }
  if (children_.size() != other.children_.size()) return false;
  for (std::size_t i = 0; i < children_.size(); ++i)
    if (!(children_[i] == other.children_[i])) return false;
  return true;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.kind() != b.kind()) return false;
  if (a.kind() == ExprKind::Variable && a.var_index() != b.var_index()) return false;
  if (a.kind() == ExprKind::Constant && !(encode_float(a.value()) == encode_float(b.value())))
    return false;
  if (a.children().size() != b.children().size()) return false;
  for (std::size_t i = 0; i < a.children().size(); ++i)
    if (!structurally_equal(a.children()[i], b.children()[i])) return false;
  return true;
}

bool OdeSystem::valid() const {
  if (dim < 1 || static_cast<int>(equations.size()) != dim) return false;
  for (const Expr& e : equations)
    if (e.max_var_index() >= dim) return false;
  return true;
}

std::vector<double> OdeSystem::eval(std::span<const double> x) const {
  std::vector<double> out(equations.size());
  for (std::size_t i = 0; i < equations.size(); ++i) out[i] = equations[i].eval(x);
  return out;
}

bool structurally_equal(const OdeSystem& a, const OdeSystem& b) {
  if (a.dim != b.dim || a.equations.size() != b.equations.size()) return false;
  for (std::size_t i = 0; i < a.equations.size(); ++i)
    if (!structurally_equal(a.equations[i], b.equations[i])) return false;
  return true;
}

namespace {

const char* kind_token(ExprKind k) {
  switch (k) {
    case ExprKind::Add:
      return "add";
    case ExprKind::Mul:
      return "mul";
    case ExprKind::Sin:
      return "sin";
    case ExprKind::Square:
      return "pow2";
    case ExprKind::Inverse:
      return "inv";
    case ExprKind::Identity:
      return "id";
    default:
      return nullptr;
  }
}

void write_prefix(const Expr& e, std::vector<std::string>& out) {
  switch (e.kind()) {
    case ExprKind::Constant: {
      const TokenTriple t = encode_float(e.value());
      out.push_back("<const>");
      out.push_back(sign_token(t));
      out.push_back(mantissa_token(t));
      out.push_back(exponent_token(t));
      return;
    }
    case ExprKind::Variable:
      out.push_back("x" + std::to_string(e.var_index()));
      return;
    default:
      out.push_back(kind_token(e.kind()));
      for (const Expr& c : e.children()) write_prefix(c, out);
  }
}

struct Parser {
  std::span<const std::string> tokens;
  std::size_t pos = 0;
  int dim = 0;
  std::string error;

  bool done() const { return pos >= tokens.size(); }

  std::optional<Expr> parse() {
    if (done()) {
      error = "arity underflow: expression ends early";
      return std::nullopt;
    }
    const std::string& tok = tokens[pos++];
    if (tok == "add" || tok == "mul") {
      auto lhs = parse();
      if (!lhs) return std::nullopt;
      auto rhs = parse();
      if (!rhs) return std::nullopt;
      return Expr::binary(tok == "add" ? ExprKind::Add : ExprKind::Mul, std::move(*lhs),
                          std::move(*rhs));
    }
    if (tok == "sin" || tok == "pow2" || tok == "inv" || tok == "id") {
      auto child = parse();
      if (!child) return std::nullopt;
      ExprKind k = tok == "sin"    ? ExprKind::Sin
                   : tok == "pow2" ? ExprKind::Square
                   : tok == "inv"  ? ExprKind::Inverse
                                   : ExprKind::Identity;
      return Expr::unary(k, std::move(*child));
    }
    if (tok == "<const>") {
      if (pos + 3 > tokens.size()) {
        error = "truncated constant triple";
        return std::nullopt;
      }
      TokenTriple t;
      if (!parse_triple_tokens(tokens[pos], tokens[pos + 1], tokens[pos + 2], &t)) {
        error = "malformed constant triple at token " + std::to_string(pos);
        return std::nullopt;
      }
      pos += 3;
      return Expr::constant(decode_float(t));
    }
    if (tok.size() >= 2 && tok[0] == 'x' && tok.find_first_not_of("0123456789", 1) == std::string::npos) {
      const int idx = std::stoi(tok.substr(1));
      if (idx >= dim) {
        error = "variable index " + std::to_string(idx) + " >= dimension " + std::to_string(dim);
        return std::nullopt;
      }
      return Expr::variable(idx);
    }
    error = "unknown token '" + tok + "'";
    return std::nullopt;
  }
};

}  // namespace

std::vector<std::string> to_prefix(const Expr& e) {
  std::vector<std::string> out;
  write_prefix(e, out);
  return out;
}

std::vector<std::string> to_prefix(const OdeSystem& s) {
  std::vector<std::string> out;
  for (int i = 0; i < s.dim; ++i) {
    if (i > 0) out.push_back("<sep>");
    write_prefix(s.equations[i], out);
  }
  return out;
}

std::optional<Expr> parse_prefix_expr(std::span<const std::string> tokens, int dim,
                                      std::string* error) {
  Parser p{tokens, 0, dim, {}};
  auto e = p.parse();
  if (e && !p.done()) {
    e = std::nullopt;
    p.error = "arity overflow: trailing tokens";
  }
  if (!e && error) *error = p.error;
  return e;
}

std::optional<OdeSystem> parse_prefix(std::span<const std::string> tokens, int dim,
                                      std::string* error) {
  if (dim < 1) {
    if (error) *error = "dimension must be positive";
    return std::nullopt;
  }
  std::vector<std::span<const std::string>> segments;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= tokens.size(); ++i) {
    if (i == tokens.size() || tokens[i] == "<sep>") {
      segments.push_back(tokens.subspan(start, i - start));
      start = i + 1;
    }
  }
  if (static_cast<int>(segments.size()) != dim) {
    if (error)
      *error = "expected " + std::to_string(dim) + " segments, got " +
               std::to_string(segments.size());
    return std::nullopt;
  }
  OdeSystem s;
  s.dim = dim;
  for (auto seg : segments) {
    auto e = parse_prefix_expr(seg, dim, error);
    if (!e) return std::nullopt;
    s.equations.push_back(std::move(*e));
  }
  return s;
}

namespace {

std::string format_constant(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// prec: 0 = additive context, 1 = multiplicative, 2 = atom expected
std::string infix(const Expr& e, int prec) {
  std::string s;
  switch (e.kind()) {
    case ExprKind::Constant:
      s = format_constant(e.value());
      if (e.value() < 0 && prec >= 1) s = "(" + s + ")";
      return s;
    case ExprKind::Variable:
      return "x" + std::to_string(e.var_index());
    case ExprKind::Add:
      s = infix(e.children()[0], 0) + " + " + infix(e.children()[1], 0);
      return prec >= 1 ? "(" + s + ")" : s;
    case ExprKind::Mul:
      return infix(e.children()[0], 1) + "*" + infix(e.children()[1], 1);
    case ExprKind::Sin:
      return "sin(" + infix(e.children()[0], 0) + ")";
    case ExprKind::Square:
      if (e.children()[0].kind() == ExprKind::Variable) return infix(e.children()[0], 2) + "^2";
      return "(" + infix(e.children()[0], 0) + ")^2";
    case ExprKind::Inverse:
      return "1/(" + infix(e.children()[0], 0) + ")";
    case ExprKind::Identity:
      return infix(e.children()[0], prec);
  }
  return s;
}

}  // namespace

std::string to_infix(const Expr& e) { return infix(e, 0); }

std::string render_system(const OdeSystem& s) {
  std::string out;
  for (int i = 0; i < s.dim; ++i) {
    out += "dx" + std::to_string(i) + "/dt = " + to_infix(s.equations[i]);
    if (i + 1 < s.dim) out += "\n";
  }
  return out;
}

}  // namespace misode
