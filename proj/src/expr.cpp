#include "gjelab/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace gjelab {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseSyntax: return "ParseSyntax";
    case ErrorCode::UnknownIdentifier: return "UnknownIdentifier";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OrderTooHigh: return "OrderTooHigh";
    case ErrorCode::EvalDomain: return "EvalDomain";
    case ErrorCode::InvalidDomainBox: return "InvalidDomainBox";
    case ErrorCode::A2Violation: return "A2Violation";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::LeftDomain: return "LeftDomain";
    case ErrorCode::SingularE: return "SingularE";
    case ErrorCode::SectionTouchesBoundary: return "SectionTouchesBoundary";
    case ErrorCode::SupportSolveFailed: return "SupportSolveFailed";
    case ErrorCode::InvalidSection: return "InvalidSection";
    case ErrorCode::InverseNoConvergence: return "InverseNoConvergence";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InterpolationOutOfRange: return "InterpolationOutOfRange";
    case ErrorCode::NewtonDiverged: return "NewtonDiverged";
    case ErrorCode::EllipticityLost: return "EllipticityLost";
    case ErrorCode::NonpositiveRHS: return "NonpositiveRHS";
    case ErrorCode::StageTooDeep: return "StageTooDeep";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

bool operator==(const Var& a, const Var& b) {
  return a.kind == b.kind && (a.kind == VarKind::Z || a.index == b.index);
}

bool operator<(const Var& a, const Var& b) {
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  if (a.kind == VarKind::Z) return false;
  return a.index < b.index;
}

std::string to_string(const Var& v) {
  switch (v.kind) {
    case VarKind::X: return "x[" + std::to_string(v.index + 1) + "]";
    case VarKind::Y: return "y[" + std::to_string(v.index + 1) + "]";
    case VarKind::Z: return "z";
  }
  return "?";
}

namespace {

using NodePtr = std::shared_ptr<const ExprNode>;

NodePtr make_node(ExprOp op, double value, Var var, NodePtr a, NodePtr b) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->value = value;
  n->var = var;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Expr::Expr() : n_(make_node(ExprOp::Constant, 0.0, Var{}, nullptr, nullptr)) {}

Expr Expr::constant(double v) { return Expr(make_node(ExprOp::Constant, v, Var{}, nullptr, nullptr)); }

Expr Expr::variable(Var v) { return Expr(make_node(ExprOp::Variable, 0.0, v, nullptr, nullptr)); }

bool Expr::is_constant() const { return n_->op == ExprOp::Constant; }

bool Expr::is_constant(double& value_out) const {
  if (n_->op != ExprOp::Constant) return false;
  value_out = n_->value;
  return true;
}

Expr operator+(const Expr& a, const Expr& b) {
  double ca, cb;
  bool ia = a.is_constant(ca), ib = b.is_constant(cb);
  if (ia && ib) return Expr::constant(ca + cb);
  if (ia && ca == 0.0) return b;
  if (ib && cb == 0.0) return a;
  return Expr(make_node(ExprOp::Add, 0.0, Var{}, a.n_, b.n_));
}

Expr operator-(const Expr& a, const Expr& b) {
  double ca, cb;
  bool ia = a.is_constant(ca), ib = b.is_constant(cb);
  if (ia && ib) return Expr::constant(ca - cb);
  if (ib && cb == 0.0) return a;
  if (ia && ca == 0.0) return -b;
  return Expr(make_node(ExprOp::Sub, 0.0, Var{}, a.n_, b.n_));
}

Expr operator*(const Expr& a, const Expr& b) {
  double ca, cb;
  bool ia = a.is_constant(ca), ib = b.is_constant(cb);
  if (ia && ib) return Expr::constant(ca * cb);
  if (ia) {
    if (ca == 0.0) return Expr::constant(0.0);
    if (ca == 1.0) return b;
    if (ca == -1.0) return -b;
  }
  if (ib) {
    if (cb == 0.0) return Expr::constant(0.0);
    if (cb == 1.0) return a;
    if (cb == -1.0) return -a;
  }
  return Expr(make_node(ExprOp::Mul, 0.0, Var{}, a.n_, b.n_));
}

Expr operator/(const Expr& a, const Expr& b) {
  double ca, cb;
  bool ia = a.is_constant(ca), ib = b.is_constant(cb);
  if (ib && cb != 0.0) {
    if (ia) return Expr::constant(ca / cb);
    if (cb == 1.0) return a;
  }
  if (ia && ca == 0.0) return Expr::constant(0.0);
  return Expr(make_node(ExprOp::Div, 0.0, Var{}, a.n_, b.n_));
}

Expr operator-(const Expr& a) {
  double ca;
  if (a.is_constant(ca)) return Expr::constant(-ca);
  if (a.n_->op == ExprOp::Neg) return Expr(a.n_->a);
  return Expr(make_node(ExprOp::Neg, 0.0, Var{}, a.n_, nullptr));
}

Expr Expr::pow(const Expr& base, double exponent) {
  if (exponent == 0.0) return Expr::constant(1.0);
  if (exponent == 1.0) return base;
  double cb;
  if (base.is_constant(cb)) {
    double v = std::pow(cb, exponent);
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return Expr(make_node(ExprOp::Pow, exponent, Var{}, base.n_, nullptr));
}

Expr Expr::sqrt(const Expr& a) {
  double ca;
  if (a.is_constant(ca) && ca >= 0.0) return Expr::constant(std::sqrt(ca));
  return Expr(make_node(ExprOp::Sqrt, 0.0, Var{}, a.n_, nullptr));
}

Expr Expr::exp(const Expr& a) {
  double ca;
  if (a.is_constant(ca)) return Expr::constant(std::exp(ca));
  return Expr(make_node(ExprOp::Exp, 0.0, Var{}, a.n_, nullptr));
}

Expr Expr::log(const Expr& a) {
  double ca;
  if (a.is_constant(ca) && ca > 0.0) return Expr::constant(std::log(ca));
  return Expr(make_node(ExprOp::Log, 0.0, Var{}, a.n_, nullptr));
}

namespace {

std::string node_str(const ExprNode& n);

double eval_node(const ExprNode& n, const EvalPoint& pt) {
  switch (n.op) {
    case ExprOp::Constant:
      return n.value;
    case ExprOp::Variable:
      switch (n.var.kind) {
        case VarKind::X:
          if (n.var.index >= static_cast<int>(pt.x.size()))
            throw GjeError(ErrorCode::DimensionMismatch, "x component " + std::to_string(n.var.index + 1) +
                                                             " beyond evaluation point");
          return pt.x[n.var.index];
        case VarKind::Y:
          if (n.var.index >= static_cast<int>(pt.y.size()))
            throw GjeError(ErrorCode::DimensionMismatch, "y component " + std::to_string(n.var.index + 1) +
                                                             " beyond evaluation point");
          return pt.y[n.var.index];
        case VarKind::Z:
          return pt.z;
      }
      return 0.0;
    case ExprOp::Add:
      return eval_node(*n.a, pt) + eval_node(*n.b, pt);
    case ExprOp::Sub:
      return eval_node(*n.a, pt) - eval_node(*n.b, pt);
    case ExprOp::Mul:
      return eval_node(*n.a, pt) * eval_node(*n.b, pt);
    case ExprOp::Div: {
      double den = eval_node(*n.b, pt);
      if (den == 0.0)
        throw GjeError(ErrorCode::EvalDomain, "division by zero in " + node_str(n));
      return eval_node(*n.a, pt) / den;
    }
    case ExprOp::Pow: {
      double base = eval_node(*n.a, pt);
      if (base == 0.0 && n.value < 0.0)
        throw GjeError(ErrorCode::EvalDomain, "zero base with negative exponent in " + node_str(n));
      if (base < 0.0 && n.value != std::floor(n.value))
        throw GjeError(ErrorCode::EvalDomain, "negative base with fractional exponent in " + node_str(n));
      return std::pow(base, n.value);
    }
    case ExprOp::Neg:
      return -eval_node(*n.a, pt);
    case ExprOp::Sqrt: {
      double arg = eval_node(*n.a, pt);
      if (arg < 0.0) throw GjeError(ErrorCode::EvalDomain, "sqrt of negative value in " + node_str(n));
      return std::sqrt(arg);
    }
    case ExprOp::Exp:
      return std::exp(eval_node(*n.a, pt));
    case ExprOp::Log: {
      double arg = eval_node(*n.a, pt);
      if (arg <= 0.0) throw GjeError(ErrorCode::EvalDomain, "log of nonpositive value in " + node_str(n));
      return std::log(arg);
    }
  }
  return 0.0;
}

}  // namespace

double Expr::eval(const EvalPoint& pt) const { return eval_node(*n_, pt); }

Expr Expr::deriv(const Var& v) const {
  const ExprNode& n = *n_;
  switch (n.op) {
    case ExprOp::Constant:
      return Expr::constant(0.0);
    case ExprOp::Variable:
      return Expr::constant(n.var == v ? 1.0 : 0.0);
    case ExprOp::Add:
      return Expr(n.a).deriv(v) + Expr(n.b).deriv(v);
    case ExprOp::Sub:
      return Expr(n.a).deriv(v) - Expr(n.b).deriv(v);
    case ExprOp::Mul:
      return Expr(n.a).deriv(v) * Expr(n.b) + Expr(n.a) * Expr(n.b).deriv(v);
    case ExprOp::Div: {
      Expr a(n.a), b(n.b);
      return (a.deriv(v) * b - a * b.deriv(v)) / (b * b);
    }
    case ExprOp::Pow: {
      Expr a(n.a);
      return Expr::constant(n.value) * Expr::pow(a, n.value - 1.0) * a.deriv(v);
    }
    case ExprOp::Neg:
      return -Expr(n.a).deriv(v);
    case ExprOp::Sqrt: {
      Expr a(n.a);
      return a.deriv(v) / (Expr::constant(2.0) * Expr::sqrt(a));
    }
    case ExprOp::Exp: {
      Expr a(n.a);
      return a.deriv(v) * Expr::exp(a);
    }
    case ExprOp::Log: {
      Expr a(n.a);
      return a.deriv(v) / a;
    }
  }
  return Expr::constant(0.0);
}

Expr Expr::deriv(std::span<const Var> multi) const {
  if (multi.size() > 4)
    throw GjeError(ErrorCode::OrderTooHigh,
                   "derivative order " + std::to_string(multi.size()) + " exceeds 4");
  Expr e = *this;
  for (const Var& v : multi) e = e.deriv(v);
  return e;
}

namespace {

// Precedence levels for printing: additive 1, multiplicative 2, prefix 3, pow 4.
int node_prec(const ExprNode& n) {
  switch (n.op) {
    case ExprOp::Add:
    case ExprOp::Sub: return 1;
    case ExprOp::Mul:
    case ExprOp::Div: return 2;
    case ExprOp::Neg: return 3;
    case ExprOp::Pow: return 4;
    default: return 5;
  }
}

void print_node(const ExprNode& n, std::string& out, int parent_prec) {
  int prec = node_prec(n);
  bool paren = prec < parent_prec;
  if (paren) out += '(';
  switch (n.op) {
    case ExprOp::Constant:
      if (n.value < 0.0) {
        out += '(';
        out += format_double(n.value);
        out += ')';
      } else {
        out += format_double(n.value);
      }
      break;
    case ExprOp::Variable:
      out += to_string(n.var);
      break;
    case ExprOp::Add:
      print_node(*n.a, out, 1);
      out += " + ";
      print_node(*n.b, out, 2);
      break;
    case ExprOp::Sub:
      print_node(*n.a, out, 1);
      out += " - ";
      print_node(*n.b, out, 2);
      break;
    case ExprOp::Mul:
      print_node(*n.a, out, 2);
      out += "*";
      print_node(*n.b, out, 3);
      break;
    case ExprOp::Div:
      print_node(*n.a, out, 2);
      out += "/";
      print_node(*n.b, out, 3);
      break;
    case ExprOp::Pow:
      print_node(*n.a, out, 5);
      out += "^";
      out += format_double(n.value);
      break;
    case ExprOp::Neg:
      out += "-";
      print_node(*n.a, out, 3);
      break;
    case ExprOp::Sqrt:
      out += "sqrt(";
      print_node(*n.a, out, 0);
      out += ")";
      break;
    case ExprOp::Exp:
      out += "exp(";
      print_node(*n.a, out, 0);
      out += ")";
      break;
    case ExprOp::Log:
      out += "log(";
      print_node(*n.a, out, 0);
      out += ")";
      break;
  }
  if (paren) out += ')';
}

std::string node_str(const ExprNode& n) {
  std::string s;
  print_node(n, s, 0);
  return s;
}

}  // namespace

std::string Expr::str() const { return node_str(*n_); }

namespace {

void walk_max_index(const ExprNode& n, VarKind kind, int& best) {
  if (n.op == ExprOp::Variable && n.var.kind == kind) best = std::max(best, n.var.index);
  if (n.a) walk_max_index(*n.a, kind, best);
  if (n.b) walk_max_index(*n.b, kind, best);
}

size_t walk_count(const ExprNode& n) {
  size_t c = 1;
  if (n.a) c += walk_count(*n.a);
  if (n.b) c += walk_count(*n.b);
  return c;
}

}  // namespace

int Expr::max_var_index(VarKind kind) const {
  int best = -1;
  walk_max_index(*n_, kind, best);
  return best;
}

size_t Expr::node_count() const { return walk_count(*n_); }

// ---------------------------------------------------------------------------
// DomainBox

DomainBox DomainBox::square(int n, Interval u, Interval v, Interval z, Interval j,
                            double diag_excl) {
  DomainBox box;
  box.n = n;
  box.u_box.assign(n, u);
  box.v_box.assign(n, v);
  box.z_interval = z;
  box.j_interval = j;
  box.diagonal_exclusion = diag_excl;
  box.validate();
  return box;
}

void DomainBox::validate() const {
  if (n < 2) throw GjeError(ErrorCode::InvalidDomainBox, "dimension must be >= 2");
  if (static_cast<int>(u_box.size()) != n || static_cast<int>(v_box.size()) != n)
    throw GjeError(ErrorCode::InvalidDomainBox, "box dimension mismatch");
  for (const auto& iv : u_box)
    if (!(iv.lo < iv.hi)) throw GjeError(ErrorCode::InvalidDomainBox, "empty U interval");
  for (const auto& iv : v_box)
    if (!(iv.lo < iv.hi)) throw GjeError(ErrorCode::InvalidDomainBox, "empty V interval");
  if (!(z_interval.lo < z_interval.hi))
    throw GjeError(ErrorCode::InvalidDomainBox, "empty z interval");
  if (!(j_interval.lo < j_interval.hi))
    throw GjeError(ErrorCode::InvalidDomainBox, "empty J interval");
  if (diagonal_exclusion < 0.0)
    throw GjeError(ErrorCode::InvalidDomainBox, "negative diagonal exclusion radius");
}

bool DomainBox::contains_x(std::span<const double> x, double tol) const {
  if (static_cast<int>(x.size()) != n) return false;
  for (int i = 0; i < n; ++i)
    if (!u_box[i].contains(x[i], tol)) return false;
  return true;
}

bool DomainBox::contains_y(std::span<const double> y, double tol) const {
  if (static_cast<int>(y.size()) != n) return false;
  for (int i = 0; i < n; ++i)
    if (!v_box[i].contains(y[i], tol)) return false;
  return true;
}

bool DomainBox::excluded_by_diagonal(std::span<const double> x, std::span<const double> y) const {
  if (diagonal_exclusion <= 0.0) return false;
  double d2 = 0.0;
  for (int i = 0; i < n; ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return d2 < diagonal_exclusion * diagonal_exclusion;
}

bool DomainBox::contains(std::span<const double> x, std::span<const double> y, double z,
                         double tol) const {
  return contains_x(x, tol) && contains_y(y, tol) && contains_z(z, tol) &&
         !excluded_by_diagonal(x, y);
}

namespace {
std::vector<double> sample_box(const std::vector<Interval>& box, std::mt19937_64& rng,
                               double shrink) {
  std::vector<double> out(box.size());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (size_t i = 0; i < box.size(); ++i) {
    double pad = shrink * box[i].length();
    out[i] = box[i].lo + pad + (box[i].length() - 2 * pad) * u01(rng);
  }
  return out;
}
}  // namespace

std::vector<double> DomainBox::sample_x(std::mt19937_64& rng, double shrink) const {
  return sample_box(u_box, rng, shrink);
}

std::vector<double> DomainBox::sample_y(std::mt19937_64& rng, double shrink) const {
  return sample_box(v_box, rng, shrink);
}

double DomainBox::sample_z(std::mt19937_64& rng, double shrink) const {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double pad = shrink * z_interval.length();
  return z_interval.lo + pad + (z_interval.length() - 2 * pad) * u01(rng);
}

// ---------------------------------------------------------------------------
// Parser

namespace {

enum class TokKind { Number, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, LBracket, RBracket, Comma, End };

struct Token {
  TokKind kind;
  double number{0.0};
  std::string ident;
  int column{0};
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    tok_.column = static_cast<int>(pos_) + 1;
    if (pos_ >= src_.size()) {
      tok_.kind = TokKind::End;
      return;
    }
    char c = src_[pos_];
    switch (c) {
      case '+': tok_.kind = TokKind::Plus; ++pos_; return;
      case '-': tok_.kind = TokKind::Minus; ++pos_; return;
      case '*': tok_.kind = TokKind::Star; ++pos_; return;
      case '/': tok_.kind = TokKind::Slash; ++pos_; return;
      case '^': tok_.kind = TokKind::Caret; ++pos_; return;
      case '(': tok_.kind = TokKind::LParen; ++pos_; return;
      case ')': tok_.kind = TokKind::RParen; ++pos_; return;
      case '[': tok_.kind = TokKind::LBracket; ++pos_; return;
      case ']': tok_.kind = TokKind::RBracket; ++pos_; return;
      case ',': tok_.kind = TokKind::Comma; ++pos_; return;
      default: break;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
        ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        size_t epos = pos_ + 1;
        if (epos < src_.size() && (src_[epos] == '+' || src_[epos] == '-')) ++epos;
        if (epos < src_.size() && std::isdigit(static_cast<unsigned char>(src_[epos]))) {
          pos_ = epos;
          while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        }
      }
      tok_.kind = TokKind::Number;
      tok_.number = std::stod(std::string(src_.substr(start, pos_ - start)));
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      tok_.kind = TokKind::Ident;
      tok_.ident = std::string(src_.substr(start, pos_ - start));
      return;
    }
    throw ParseError(ErrorCode::ParseSyntax, std::string("unexpected character '") + c + "'",
                     static_cast<int>(pos_) + 1);
  }

  std::string_view src_;
  size_t pos_{0};
  Token tok_;
};

// Parse-time value: scalar expression or an n-vector of them.
struct PValue {
  bool vector{false};
  Expr s;
  std::vector<Expr> v;

  static PValue scalar(Expr e) {
    PValue p;
    p.s = std::move(e);
    return p;
  }
  static PValue vec(std::vector<Expr> comps) {
    PValue p;
    p.vector = true;
    p.v = std::move(comps);
    return p;
  }
};

class Parser {
 public:
  Parser(std::string_view src, int dim) : lex_(src), dim_(dim) {}

  Expr parse() {
    PValue v = parse_expr();
    if (lex_.peek().kind != TokKind::End)
      throw ParseError(ErrorCode::ParseSyntax, "trailing input", lex_.peek().column);
    if (v.vector)
      throw ParseError(ErrorCode::DimensionMismatch, "expression is vector-valued; expected scalar", 1);
    return v.s;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(ErrorCode::ParseSyntax, msg, lex_.peek().column);
  }

  PValue parse_expr() {
    bool negate = false;
    if (lex_.peek().kind == TokKind::Plus) {
      lex_.next();
    } else if (lex_.peek().kind == TokKind::Minus) {
      lex_.next();
      negate = true;
    }
    PValue acc = parse_term();
    if (negate) acc = apply_neg(acc);
    while (lex_.peek().kind == TokKind::Plus || lex_.peek().kind == TokKind::Minus) {
      bool minus = lex_.next().kind == TokKind::Minus;
      int col = lex_.peek().column;
      PValue rhs = parse_term();
      acc = apply_addsub(acc, rhs, minus, col);
    }
    return acc;
  }

  PValue parse_term() {
    PValue acc = parse_factor();
    while (lex_.peek().kind == TokKind::Star || lex_.peek().kind == TokKind::Slash) {
      bool div = lex_.next().kind == TokKind::Slash;
      int col = lex_.peek().column;
      PValue rhs = parse_factor();
      acc = apply_muldiv(acc, rhs, div, col);
    }
    return acc;
  }

  PValue parse_factor() {
    PValue base = parse_base();
    if (lex_.peek().kind == TokKind::Caret) {
      int col = lex_.next().column;
      double sign = 1.0;
      if (lex_.peek().kind == TokKind::Minus) {
        lex_.next();
        sign = -1.0;
      }
      if (lex_.peek().kind != TokKind::Number) fail("exponent must be a number literal");
      double expo = sign * lex_.next().number;
      if (base.vector)
        throw ParseError(ErrorCode::DimensionMismatch, "cannot raise a vector to a power", col);
      base.s = Expr::pow(base.s, expo);
    }
    return base;
  }

  PValue parse_base() {
    const Token& t = lex_.peek();
    switch (t.kind) {
      case TokKind::Number:
        return PValue::scalar(Expr::constant(lex_.next().number));
      case TokKind::LParen: {
        lex_.next();
        PValue v = parse_expr();
        if (lex_.peek().kind != TokKind::RParen) fail("expected ')'");
        lex_.next();
        return v;
      }
      case TokKind::Ident:
        return parse_ident();
      default:
        fail("expected number, identifier or '('");
    }
  }

  PValue parse_ident() {
    Token t = lex_.next();
    const std::string& id = t.ident;
    if (id == "z") return PValue::scalar(Expr::variable(Var{VarKind::Z, 0}));
    if (id == "x" || id == "y") {
      VarKind kind = (id == "x") ? VarKind::X : VarKind::Y;
      if (lex_.peek().kind == TokKind::LBracket) {
        lex_.next();
        if (lex_.peek().kind != TokKind::Number) fail("expected component index");
        Token idx = lex_.next();
        if (lex_.peek().kind != TokKind::RBracket) fail("expected ']'");
        lex_.next();
        int k = static_cast<int>(idx.number);
        if (k != idx.number || k < 1 || k > dim_)
          throw ParseError(ErrorCode::DimensionMismatch,
                           "component index " + format_double(idx.number) + " outside 1.." +
                               std::to_string(dim_),
                           idx.column);
        return PValue::scalar(Expr::variable(Var{kind, k - 1}));
      }
      std::vector<Expr> comps;
      comps.reserve(dim_);
      for (int i = 0; i < dim_; ++i) comps.push_back(Expr::variable(Var{kind, i}));
      return PValue::vec(std::move(comps));
    }
    // function call
    if (lex_.peek().kind != TokKind::LParen)
      throw ParseError(ErrorCode::UnknownIdentifier, "unknown identifier '" + id + "'", t.column);
    lex_.next();
    std::vector<PValue> args;
    if (lex_.peek().kind != TokKind::RParen) {
      args.push_back(parse_expr());
      while (lex_.peek().kind == TokKind::Comma) {
        lex_.next();
        args.push_back(parse_expr());
      }
    }
    if (lex_.peek().kind != TokKind::RParen) fail("expected ')'");
    lex_.next();
    return apply_function(id, args, t.column);
  }

  PValue apply_neg(const PValue& a) {
    if (!a.vector) return PValue::scalar(-a.s);
    std::vector<Expr> out;
    out.reserve(a.v.size());
    for (const Expr& e : a.v) out.push_back(-e);
    return PValue::vec(std::move(out));
  }

  PValue apply_addsub(const PValue& a, const PValue& b, bool minus, int col) {
    if (a.vector != b.vector)
      throw ParseError(ErrorCode::DimensionMismatch, "cannot add scalar and vector", col);
    if (!a.vector) return PValue::scalar(minus ? a.s - b.s : a.s + b.s);
    std::vector<Expr> out;
    out.reserve(a.v.size());
    for (size_t i = 0; i < a.v.size(); ++i) out.push_back(minus ? a.v[i] - b.v[i] : a.v[i] + b.v[i]);
    return PValue::vec(std::move(out));
  }

  PValue apply_muldiv(const PValue& a, const PValue& b, bool div, int col) {
    if (!a.vector && !b.vector) return PValue::scalar(div ? a.s / b.s : a.s * b.s);
    if (a.vector && b.vector)
      throw ParseError(ErrorCode::DimensionMismatch,
                       div ? "cannot divide vector by vector" : "use dot() for vector products", col);
    if (div && b.vector)
      throw ParseError(ErrorCode::DimensionMismatch, "cannot divide by a vector", col);
    const std::vector<Expr>& vec = a.vector ? a.v : b.v;
    const Expr& sc = a.vector ? b.s : a.s;
    std::vector<Expr> out;
    out.reserve(vec.size());
    for (const Expr& e : vec) out.push_back(div ? e / sc : e * sc);
    return PValue::vec(std::move(out));
  }

  PValue apply_function(const std::string& id, const std::vector<PValue>& args, int col) {
    auto want = [&](size_t k) {
      if (args.size() != k)
        throw ParseError(ErrorCode::ParseSyntax,
                         id + " expects " + std::to_string(k) + " argument(s)", col);
    };
    auto scalar_arg = [&](size_t i) -> const Expr& {
      if (args[i].vector)
        throw ParseError(ErrorCode::DimensionMismatch, id + " expects a scalar argument", col);
      return args[i].s;
    };
    auto vector_arg = [&](size_t i) -> const std::vector<Expr>& {
      if (!args[i].vector)
        throw ParseError(ErrorCode::DimensionMismatch, id + " expects a vector argument", col);
      return args[i].v;
    };
    if (id == "dot") {
      want(2);
      const auto& u = vector_arg(0);
      const auto& w = vector_arg(1);
      Expr acc = Expr::constant(0.0);
      for (size_t i = 0; i < u.size(); ++i) acc = acc + u[i] * w[i];
      return PValue::scalar(acc);
    }
    if (id == "norm2") {
      want(1);
      const auto& u = vector_arg(0);
      Expr acc = Expr::constant(0.0);
      for (const Expr& e : u) acc = acc + e * e;
      return PValue::scalar(acc);
    }
    if (id == "norm") {
      want(1);
      const auto& u = vector_arg(0);
      Expr acc = Expr::constant(0.0);
      for (const Expr& e : u) acc = acc + e * e;
      return PValue::scalar(Expr::sqrt(acc));
    }
    if (id == "sqrt") {
      want(1);
      return PValue::scalar(Expr::sqrt(scalar_arg(0)));
    }
    if (id == "exp") {
      want(1);
      return PValue::scalar(Expr::exp(scalar_arg(0)));
    }
    if (id == "log") {
      want(1);
      return PValue::scalar(Expr::log(scalar_arg(0)));
    }
    if (id == "neg") {
      want(1);
      return apply_neg(args[0]);
    }
    throw ParseError(ErrorCode::UnknownIdentifier, "unknown function '" + id + "'", col);
  }

  Lexer lex_;
  int dim_;
};

}  // namespace

Expr parse_expression(std::string_view src, int dim) {
  if (dim < 1) throw GjeError(ErrorCode::DimensionMismatch, "dimension must be positive");
  Parser p(src, dim);
  return p.parse();
}

}  // namespace gjelab
