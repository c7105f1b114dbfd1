#include <doctest.h>

#include <cmath>
#include <random>

#include "builtins.hpp"
#include "gjelab/duality.hpp"

using namespace gjelab;
using gjelab::testing::make_ma;
using gjelab::testing::make_quad_ot;
using gjelab::testing::make_reflector;

TEST_CASE("z-solve closed forms and round trip") {
  GenFun ma = make_ma();
  Eigen::VectorXd x(2), y(2);
  x << 0.4, -0.3;
  y << 1.1, 0.6;
  double u = 0.25;
  CHECK(z_inverse(ma, x, y, u) == doctest::Approx(x.dot(y) - u).epsilon(1e-14));

  GenFun ot = make_quad_ot();
  CHECK(z_inverse(ot, x, y, u) ==
        doctest::Approx(-0.5 * (x - y).squaredNorm() - u).epsilon(1e-14));

  GenFun rf = make_reflector();
  Eigen::VectorXd xr(2), yr(2);
  xr << 0.05, -0.1;
  yr << 0.8, 0.9;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uz(-1.2, 1.2);
  for (int k = 0; k < 200; ++k) {
    double z_true = uz(rng);
    double g = rf.eval(xr, yr, z_true);
    double z = z_inverse(rf, xr, yr, g);
    CHECK(std::abs(rf.eval(xr, yr, z) - g) <= 1e-12);
    CHECK(std::abs(z - z_true) < 1e-11);
  }

  CHECK_THROWS_AS(z_inverse(ma, x, y, 1e9), GjeError);
}

TEST_CASE("Legendre self-duality of the quadratic bowl") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1.5, -1.5}, {1.5, 1.5}, 97);
  GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm();
  });
  EnvelopeOptions opts;
  opts.dual_nodes = 65;
  opts.stride = 1;
  opts.v_lo = {-1.5, -1.5};
  opts.v_hi = {1.5, 1.5};
  DualFunction v = g_star_transform(u, ma, opts);
  // v(y) = |y|^2/2 wherever the maximizer x = y is interior
  double worst = 0.0;
  for (int j = 0; j < v.grid.ny; ++j)
    for (int i = 0; i < v.grid.nx; ++i) {
      Eigen::Vector2d y = v.grid.node(i, j);
      if (y.norm() > 1.2) continue;
      REQUIRE(v.ok[v.grid.index(i, j)]);
      worst = std::max(worst, std::abs(v.at(i, j) - 0.5 * y.squaredNorm()));
    }
  CHECK(worst < 2e-3);  // quadratic loss at the grid argmax ~ (h/2)^2
}

TEST_CASE("support function of the cone: dual of |x| vanishes inside the unit ball") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 129);
  GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) { return x.norm(); });
  EnvelopeOptions opts;
  opts.dual_nodes = 81;
  opts.stride = 1;
  opts.v_lo = {-1.3, -1.3};
  opts.v_hi = {1.3, 1.3};
  DualFunction v = g_star_transform(u, ma, opts);
  for (int j = 0; j < v.grid.ny; ++j)
    for (int i = 0; i < v.grid.nx; ++i) {
      Eigen::Vector2d y = v.grid.node(i, j);
      if (y.norm() <= 0.9)
        CHECK(std::abs(v.at(i, j)) < 1e-12);  // sup_x (x.y - |x|) = 0 for |y| <= 1
    }
}

TEST_CASE("quadratic-cost dual against a brute-force fine-grid envelope") {
  GenFun ot = make_quad_ot();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 65);
  GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return x.squaredNorm();
  });
  EnvelopeOptions opts;
  opts.dual_nodes = 33;
  opts.stride = 1;
  opts.v_lo = {-2.0, -2.0};
  opts.v_hi = {2.0, 2.0};
  DualFunction v = g_star_transform(u, ot, opts);
  // oracle: closed-form z = -|x-y|^2/2 - u(x) maximized on a finer x lattice
  for (int j = 0; j < v.grid.ny; j += 4)
    for (int i = 0; i < v.grid.nx; i += 4) {
      Eigen::Vector2d y = v.grid.node(i, j);
      if (std::abs(y.x()) > 2.0 || std::abs(y.y()) > 2.0) continue;
      double best = -1e300;
      const int fine = 257;
      for (int b = 0; b < fine; ++b)
        for (int a = 0; a < fine; ++a) {
          Eigen::Vector2d x(-1.0 + 2.0 * a / (fine - 1), -1.0 + 2.0 * b / (fine - 1));
          best = std::max(best, -0.5 * (x - y).squaredNorm() - x.squaredNorm());
        }
      // coarser primal lattice only loses O(h^2)
      CHECK(v.at(i, j) <= best + 1e-12);
      CHECK(v.at(i, j) >= best - 4e-3);
    }
}

TEST_CASE("double transform reproduces g-convex functions and projects others") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 129);
  GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm();
  });
  EnvelopeOptions opts;
  opts.dual_nodes = 129;
  opts.stride = 1;
  opts.v_lo = {-1.6, -1.6};
  opts.v_hi = {1.6, 1.6};
  DoubleTransformReport rep = double_transform_check(u, ma, opts);
  CHECK(rep.max_abs_defect <= 2.0 * spec.h);
  CHECK(rep.envelope_gap >= -1e-12);  // envelope never exceeds the function

  // a bump is not g-convex: the envelope gap localizes the failure
  GridFunction bump = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm() - 0.35 * std::exp(-20.0 * x.squaredNorm());
  });
  DoubleTransformReport rep2 = double_transform_check(bump, ma, opts);
  CHECK(rep2.envelope_gap > 0.05);
}

TEST_CASE("double transform defect halves under refinement") {
  GenFun ma = make_ma();
  double prev = 0.0;
  for (int n : {65, 129}) {
    GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, n);
    GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
      return 0.5 * x.squaredNorm();
    });
    EnvelopeOptions opts;
    opts.dual_nodes = n;
    opts.stride = 1;
    opts.v_lo = {-1.6, -1.6};
    opts.v_hi = {1.6, 1.6};
    DoubleTransformReport rep = double_transform_check(u, ma, opts);
    if (prev > 0) CHECK(rep.max_abs_defect <= 0.5 * prev + 1e-12);
    prev = rep.max_abs_defect;
  }
}

TEST_CASE("monotone and idempotent envelope") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 49);
  GridFunction u1 = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm();
  });
  GridFunction u2 = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm() + 0.2 * std::exp(-4.0 * x.squaredNorm());
  });
  EnvelopeOptions opts;
  opts.dual_nodes = 49;
  opts.stride = 1;
  opts.v_lo = {-1.6, -1.6};
  opts.v_hi = {1.6, 1.6};
  DualFunction v1 = g_star_transform(u1, ma, opts);
  DualFunction v2 = g_star_transform(u2, ma, opts);
  for (int k = 0; k < v1.grid.size(); ++k)
    if (v1.ok[k] && v2.ok[k]) CHECK(v1.values[k] >= v2.values[k] - 1e-12);  // order reversal

  // projection: double transform of the double transform is the double transform
  DoubleTransformReport once = double_transform_check(u2, ma, opts);
  DoubleTransformReport twice = double_transform_check(once.u_hat, ma, opts);
  double drift = 0.0;
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i)
      drift = std::max(drift, std::abs(twice.u_hat.at(i, j) - once.u_hat.at(i, j)));
  CHECK(drift <= 1e-10);
}

TEST_CASE("reflector-type double transform defect shrinks under refinement") {
  GenFun rf = make_reflector();
  auto env = gjelab::testing::envelope_function(
      rf, [](const Eigen::Vector2d& y) { return 1.5 * (y - Eigen::Vector2d(0.85, 0.85)).squaredNorm(); },
      17);
  double prev = 1e300;
  for (int n : {33, 65}) {
    GridSpec spec = GridSpec::over_box({-0.14, -0.14}, {0.14, 0.14}, n);
    GridFunction u = GridFunction::sample(spec, env);
    EnvelopeOptions opts;
    opts.dual_nodes = n;
    opts.stride = 1;
    DoubleTransformReport rep = double_transform_check(u, rf, opts);
    CHECK(rep.max_abs_defect < prev);
    prev = rep.max_abs_defect;
  }
  CHECK(prev < 5e-3);
}

TEST_CASE("expansion blocks at a base point: bilinear and quadratic cost") {
  GenFun ma = make_ma();
  Eigen::VectorXd x0(2), y0(2);
  x0 << 0.2, -0.3;
  y0 << 0.7, 0.4;
  NormalFormReport rep = gen_exp_normal_form(ma, x0, y0, 0.1);
  CHECK((rep.xy - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(rep.z_coef == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(rep.residual < 1e-9);
  CHECK(rep.xxz.lpNorm<Eigen::Infinity>() < 1e-9);

  // quadratic cost: the composite reduces by hand to
  //   -|xt|^2/2 + xt.yt - zt, so the xx block is -I/2 and everything else
  //   above the bilinear part vanishes
  GenFun ot = make_quad_ot();
  NormalFormReport rot = gen_exp_normal_form(ot, x0, y0, -0.2);
  CHECK((rot.xy - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((rot.xx + 0.5 * Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(rot.residual == doctest::Approx(0.5).epsilon(1e-8));
  for (int k = 0; k < 2; ++k) {
    CHECK(rot.xyy[k].lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(rot.xxy[k].lpNorm<Eigen::Infinity>() < 1e-9);
  }
  CHECK(rot.xxz.lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(rot.xyz.lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(rot.yyz.lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(std::abs(rot.zz) < 1e-9);
}

TEST_CASE("expansion blocks of the log-type cost are finite and pinned") {
  GenFun rf = make_reflector();
  Eigen::VectorXd x0(2), y0(2);
  x0 << 0.0, 0.0;
  y0 << 0.85, 0.85;
  NormalFormReport rep = gen_exp_normal_form(rf, x0, y0, 0.0, 0.01);
  CHECK((rep.xy - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(rep.z_coef == doctest::Approx(-1.0).epsilon(1e-8));
  // the log cost carries genuine cubic corrections
  double a_norm = std::max(rep.xyy[0].lpNorm<Eigen::Infinity>(),
                           rep.xyy[1].lpNorm<Eigen::Infinity>());
  CHECK(a_norm > 1e-3);
  CHECK(std::isfinite(rep.residual));
}
