#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gjelab/errors.hpp"

namespace gjelab {

enum class VarKind : unsigned char { X, Y, Z };

/// One scalar variable of the phase space: x[i], y[i] or z.
struct Var {
  VarKind kind{VarKind::Z};
  int index{0};  // 0-based component for X/Y, ignored for Z
};

bool operator==(const Var& a, const Var& b);
bool operator<(const Var& a, const Var& b);
std::string to_string(const Var& v);

enum class ExprOp : unsigned char {
  Constant,
  Variable,
  Add,
  Sub,
  Mul,
  Div,
  Pow,  // exponent is a literal number, stored in `value`
  Neg,
  Sqrt,
  Exp,
  Log,
};

struct ExprNode {
  ExprOp op{ExprOp::Constant};
  double value{0.0};
  Var var{};
  std::shared_ptr<const ExprNode> a, b;
};

/// Evaluation point (x, y, z). Spans must have length >= the largest
/// variable index used by the expression.
struct EvalPoint {
  std::span<const double> x;
  std::span<const double> y;
  double z{0.0};
};

/// Immutable scalar expression tree. Vector constructs of the input grammar
/// (dot, norm, norm2, arithmetic on the vector literals x and y) are lowered
/// to scalar nodes at parse time, so differentiation and evaluation only ever
/// see scalar ops. Shared subtrees are reference counted; all operations are
/// pure and safe to use concurrently.
class Expr {
 public:
  Expr();  // constant 0
  static Expr constant(double v);
  static Expr variable(Var v);

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a);
  static Expr pow(const Expr& base, double exponent);
  static Expr sqrt(const Expr& a);
  static Expr exp(const Expr& a);
  static Expr log(const Expr& a);

  double eval(const EvalPoint& pt) const;

  /// Exact symbolic partial derivative. Throws OrderTooHigh for
  /// multi-indices of length > 4. Mixed partials commute up to rounding.
  Expr deriv(const Var& v) const;
  Expr deriv(std::span<const Var> multi) const;

  std::string str() const;

  bool is_constant() const;
  bool is_constant(double& value_out) const;
  /// Largest component index used for the given variable kind, -1 if unused.
  int max_var_index(VarKind kind) const;
  size_t node_count() const;

  const ExprNode& node() const { return *n_; }

 private:
  explicit Expr(std::shared_ptr<const ExprNode> n) : n_(std::move(n)) {}
  std::shared_ptr<const ExprNode> n_;
};

struct Interval {
  double lo{0.0}, hi{0.0};
  double length() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double t, double tol = 0.0) const { return t >= lo - tol && t <= hi + tol; }
};

/// Phase-space box Gamma = U x V x [z_lo, z_hi], with the codomain interval J
/// and an optional exclusion radius around the diagonal x = y (used for
/// generating functions that are singular there).
struct DomainBox {
  int n{2};
  std::vector<Interval> u_box;
  std::vector<Interval> v_box;
  Interval z_interval{-1.0, 1.0};
  Interval j_interval{-1.0, 1.0};
  double diagonal_exclusion{0.0};

  static DomainBox square(int n, Interval u, Interval v, Interval z, Interval j,
                          double diag_excl = 0.0);
  void validate() const;  // throws InvalidDomainBox

  bool contains_x(std::span<const double> x, double tol = 0.0) const;
  bool contains_y(std::span<const double> y, double tol = 0.0) const;
  bool contains_z(double z, double tol = 0.0) const { return z_interval.contains(z, tol); }
  bool excluded_by_diagonal(std::span<const double> x, std::span<const double> y) const;
  bool contains(std::span<const double> x, std::span<const double> y, double z,
                double tol = 0.0) const;

  std::vector<double> sample_x(std::mt19937_64& rng, double shrink = 0.0) const;
  std::vector<double> sample_y(std::mt19937_64& rng, double shrink = 0.0) const;
  double sample_z(std::mt19937_64& rng, double shrink = 0.0) const;
};

class ParseError : public GjeError {
 public:
  ParseError(ErrorCode code, const std::string& msg, int column)
      : GjeError(code, msg + " (column " + std::to_string(column) + ")"), column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

/// Parse an expression in the published grammar for dimension `dim`.
///   expr   := ('+'|'-')? term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := base ('^' ('-')? number)?
///   base   := number | 'z' | 'x' '[' idx ']' | 'y' '[' idx ']'
///           | func '(' args ')' | '(' expr ')'
///   func   := dot | norm | norm2 | exp | log | sqrt | neg
/// `x` and `y` are vector literals (components are 1-based x[1]..x[n]);
/// dot/norm/norm2 consume vector arguments, everything else is scalar.
Expr parse_expression(std::string_view src, int dim);

}  // namespace gjelab
