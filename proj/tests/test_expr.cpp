#include <doctest.h>

#include <cmath>
#include <random>

#include "gjelab/expr.hpp"

using namespace gjelab;

namespace {

const char* kMaSrc = "dot(x,y) - z";
const char* kOtSrc = "-0.5*norm2(x-y) - z";
const char* kLogSrc = "-log(norm(x-y)) - z";

double eval_at(const Expr& e, std::initializer_list<double> x, std::initializer_list<double> y,
               double z) {
  std::vector<double> xv(x), yv(y);
  return e.eval(EvalPoint{xv, yv, z});
}

// central finite difference of eval in one variable
double central_fd(const Expr& e, const Var& v, std::vector<double> x, std::vector<double> y,
                  double z, double step) {
  auto shift = [&](double s) {
    std::vector<double> xs = x, ys = y;
    double zs = z;
    switch (v.kind) {
      case VarKind::X: xs[v.index] += s; break;
      case VarKind::Y: ys[v.index] += s; break;
      case VarKind::Z: zs += s; break;
    }
    return e.eval(EvalPoint{xs, ys, zs});
  };
  return (shift(step) - shift(-step)) / (2.0 * step);
}

}  // namespace

TEST_CASE("parse/print round trips on the built-in generating functions") {
  for (const char* src : {kMaSrc, kOtSrc, kLogSrc}) {
    Expr e = parse_expression(src, 2);
    std::string printed = e.str();
    Expr e2 = parse_expression(printed, 2);
    CHECK(e2.str() == printed);  // print . parse . print is idempotent
    // structural identity via identical printed form and matching evaluations
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> x{u(rng), u(rng)}, y{u(rng) + 1.0, u(rng) + 1.0};
      double z = u(rng);
      CHECK(e.eval(EvalPoint{x, y, z}) == doctest::Approx(e2.eval(EvalPoint{x, y, z})).epsilon(1e-15));
    }
  }
}

TEST_CASE("eval matches hand arithmetic") {
  Expr ma = parse_expression(kMaSrc, 2);
  CHECK(eval_at(ma, {0.3, 0.7}, {1.0, -0.5}, -0.25) == doctest::Approx(0.2).epsilon(1e-15));

  Expr mz = parse_expression("-z", 2);
  CHECK(eval_at(mz, {0.1, 0.2}, {0.3, 0.4}, 1.0) == doctest::Approx(-1.0));
}

TEST_CASE("derivatives of the bilinear form are Kronecker deltas") {
  Expr ma = parse_expression(kMaSrc, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<Var> multi{Var{VarKind::X, i}, Var{VarKind::Y, j}};
      Expr d = ma.deriv(multi);
      double c;
      REQUIRE(d.is_constant(c));
      CHECK(c == (i == j ? 1.0 : 0.0));
    }
  std::vector<Var> dz{Var{VarKind::Z, 0}};
  double c;
  REQUIRE(ma.deriv(dz).is_constant(c));
  CHECK(c == -1.0);
}

TEST_CASE("second x-derivatives of the quadratic cost are -delta") {
  Expr ot = parse_expression(kOtSrc, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<Var> multi{Var{VarKind::X, i}, Var{VarKind::X, j}};
      double v = eval_at(ot.deriv(multi), {0.3, -0.2}, {0.9, 0.8}, 0.1);
      CHECK(v == doctest::Approx(i == j ? -1.0 : 0.0).epsilon(1e-14));
    }
}

TEST_CASE("symbolic first and second partials agree with central differences") {
  const double step = 1e-4;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ux(-0.14, 0.14), uy(0.56, 1.14), uz(-0.4, 0.4);

  std::vector<Var> vars{Var{VarKind::X, 0}, Var{VarKind::X, 1}, Var{VarKind::Y, 0},
                        Var{VarKind::Y, 1}, Var{VarKind::Z, 0}};

  for (const char* src : {kMaSrc, kOtSrc, kLogSrc}) {
    Expr e = parse_expression(src, 2);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> x{ux(rng), ux(rng)}, y{uy(rng), uy(rng)};
      double z = uz(rng);
      for (const Var& v : vars) {
        Expr d1 = e.deriv(v);
        double sym = d1.eval(EvalPoint{x, y, z});
        double fd = central_fd(e, v, x, y, z, step);
        // bound the truncation with the exact local third derivative
        std::vector<Var> m3{v, v, v};
        double third = std::abs(e.deriv(m3).eval(EvalPoint{x, y, z}));
        CHECK(std::abs(sym - fd) <= 10.0 * step * step * third + 1e-8);
        if (trial < 50) {  // second partials on a subset to keep runtime sane
          for (const Var& w : vars) {
            std::vector<Var> m2{v, w};
            double sym2 = e.deriv(m2).eval(EvalPoint{x, y, z});
            double fd2 = central_fd(d1, w, x, y, z, step);
            std::vector<Var> m3b{v, w, w, w};
            double bound = std::abs(e.deriv(m3b).eval(EvalPoint{x, y, z}));
            CHECK(std::abs(sym2 - fd2) <= 10.0 * step * step * bound + 1e-7);
          }
        }
      }
    }
  }
}

TEST_CASE("mixed partials commute at random points") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-0.14, 0.14), uy(0.56, 1.14), uz(-0.4, 0.4);
  std::vector<Var> vars{Var{VarKind::X, 0}, Var{VarKind::X, 1}, Var{VarKind::Y, 0},
                        Var{VarKind::Y, 1}, Var{VarKind::Z, 0}};
  for (const char* src : {kOtSrc, kLogSrc}) {
    Expr e = parse_expression(src, 2);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> x{ux(rng), ux(rng)}, y{uy(rng), uy(rng)};
      double z = uz(rng);
      for (const Var& a : vars)
        for (const Var& b : vars) {
          std::vector<Var> ab{a, b}, ba{b, a};
          double vab = e.deriv(ab).eval(EvalPoint{x, y, z});
          double vba = e.deriv(ba).eval(EvalPoint{x, y, z});
          CHECK(std::abs(vab - vba) <= 1e-12 * (1.0 + std::abs(vab)));
        }
    }
  }
}

TEST_CASE("order above 4 is rejected") {
  Expr e = parse_expression(kOtSrc, 2);
  std::vector<Var> m5(5, Var{VarKind::X, 0});
  CHECK_THROWS_AS(e.deriv(m5), GjeError);
  try {
    e.deriv(m5);
  } catch (const GjeError& err) {
    CHECK(err.code() == ErrorCode::OrderTooHigh);
  }
}

TEST_CASE("derivative of the norm at the diagonal fails at evaluation, not parse") {
  Expr e = parse_expression("norm(x-y)", 2);
  Expr d = e.deriv(Var{VarKind::X, 0});
  std::vector<double> x{0.5, 0.5}, y{0.5, 0.5};
  CHECK_THROWS_AS(d.eval(EvalPoint{x, y, 0.0}), GjeError);
}

TEST_CASE("parser reports syntax errors with a column") {
  CHECK_THROWS_AS(parse_expression("dot(x,", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("1 + * 2", 2), ParseError);
  try {
    parse_expression("1 + * 2", 2);
  } catch (const ParseError& pe) {
    CHECK(pe.column() == 5);
  }
}

TEST_CASE("parser rejects unknown identifiers and dimension violations") {
  CHECK_THROWS_AS(parse_expression("foo(x)", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("x[3]", 2), ParseError);     // index beyond dimension
  CHECK_THROWS_AS(parse_expression("dot(x,z)", 2), ParseError); // scalar where vector expected
  CHECK_THROWS_AS(parse_expression("x + z", 2), ParseError);    // vector + scalar
  CHECK_THROWS_AS(parse_expression("x", 2), ParseError);        // vector at top level
  CHECK_THROWS_AS(parse_expression("x*y", 2), ParseError);      // vector*vector without dot
}

TEST_CASE("domain box membership and validation") {
  DomainBox box = DomainBox::square(2, {-1, 1}, {-2, 2}, {-0.5, 0.5}, {-1, 1}, 0.25);
  std::vector<double> x{0.0, 0.0}, y_near{0.1, 0.1}, y_far{1.0, 1.0};
  CHECK(box.contains(x, y_far, 0.0));
  CHECK_FALSE(box.contains(x, y_near, 0.0));  // inside the diagonal exclusion
  CHECK_FALSE(box.contains_z(0.7));

  DomainBox bad = box;
  bad.z_interval = {1.0, -1.0};
  CHECK_THROWS_AS(bad.validate(), GjeError);
}

TEST_CASE("printed exponents with negative powers reparse") {
  Expr e = Expr::pow(parse_expression("norm2(x-y)", 2), -0.5);
  Expr e2 = parse_expression(e.str(), 2);
  std::vector<double> x{0.3, 0.1}, y{1.0, 0.9};
  CHECK(e.eval(EvalPoint{x, y, 0}) == doctest::Approx(e2.eval(EvalPoint{x, y, 0})));
}
