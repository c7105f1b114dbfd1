#include <doctest.h>

#include <cmath>
#include <random>

#include "builtins.hpp"
#include "gjelab/genfun.hpp"

using namespace gjelab;
using gjelab::testing::make_ma;
using gjelab::testing::make_quad_ot;
using gjelab::testing::make_reflector;

namespace {

PhasePoint random_phase_point(const GenFun& gf, std::mt19937_64& rng, Eigen::VectorXd* y_true,
                              double* z_true) {
  const DomainBox& box = gf.box();
  for (;;) {
    auto xs = box.sample_x(rng, 0.05);
    auto ys = box.sample_y(rng, 0.05);
    double z = box.sample_z(rng, 0.05);
    if (box.excluded_by_diagonal(xs, ys)) continue;
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(xs.data(), box.n);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), box.n);
    GenDerivs d = gf.derivs(x, y, z, 1);
    if (y_true) *y_true = y;
    if (z_true) *z_true = z;
    return PhasePoint{x, d.g, d.gx};
  }
}

}  // namespace

TEST_CASE("solve_yz closed forms for the bilinear generating function") {
  GenFun ma = make_ma();
  Eigen::Vector2d x(0.3, 0.7), p(1.0, -0.5);
  double u = 0.2;
  YZSolution s = solve_yz(ma, x, u, p);
  CHECK((s.y - p).norm() < 1e-10);                      // Y = p
  CHECK(std::abs(s.z - (x.dot(p) - u)) < 1e-10);        // Z = x.p - u
  CHECK(std::abs(s.z - (-0.25)) < 1e-10);
}

TEST_CASE("solve_yz closed forms for the quadratic cost") {
  GenFun ot = make_quad_ot();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-1.5, 1.5), up(-2.0, 2.0), uu(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd x(2), p(2);
    x << ux(rng), ux(rng);
    p << up(rng), up(rng);
    double u = uu(rng);
    YZSolution s = solve_yz(ot, x, u, p);
    CHECK((s.y - (x + p)).lpNorm<Eigen::Infinity>() < 1e-10);     // y = x + p
    CHECK(std::abs(s.z - (-0.5 * p.squaredNorm() - u)) < 1e-10);  // z = -|p|^2/2 - u
  }
}

TEST_CASE("solve_yz round trip on the reflector generating function") {
  GenFun rf = make_reflector();
  std::mt19937_64 rng(17);
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd y_true;
    double z_true;
    PhasePoint q = random_phase_point(rf, rng, &y_true, &z_true);
    YZSolution s = solve_yz(rf, q.x, q.u, q.p);
    CHECK(s.residual <= 1e-10);
    // re-evaluating (g, g_x) at the solution reproduces (u, p)
    GenDerivs d = rf.derivs(q.x, s.y, s.z, 1);
    CHECK(std::abs(d.g - q.u) + (d.gx - q.p).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK((s.y - y_true).norm() < 1e-8);
    CHECK(std::abs(s.z - z_true) < 1e-8);
  }
}

TEST_CASE("coefficients of the bilinear form: A = 0, E = I, DpA = 0") {
  GenFun ma = make_ma();
  std::mt19937_64 rng(23);
  for (int k = 0; k < 100; ++k) {
    PhasePoint q = random_phase_point(ma, rng, nullptr, nullptr);
    MateCoefficients mc = coefficients(ma, q);
    CHECK(mc.a.lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((mc.e - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(std::abs(mc.det_e - 1.0) < 1e-10);
    for (int kk = 0; kk < 2; ++kk) CHECK(mc.dp_a[kk].lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("coefficients of the quadratic cost: A = -I, E = I") {
  GenFun ot = make_quad_ot();
  std::mt19937_64 rng(29);
  for (int k = 0; k < 100; ++k) {
    PhasePoint q = random_phase_point(ot, rng, nullptr, nullptr);
    MateCoefficients mc = coefficients(ot, q);
    CHECK((mc.a + Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((mc.e - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 1e-10);
    for (int kk = 0; kk < 2; ++kk) CHECK(mc.dp_a[kk].lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("closed-form DpA matches a central difference of A over p") {
  GenFun rf = make_reflector();
  std::mt19937_64 rng(31);
  const double step = 1e-5;
  for (int k = 0; k < 25; ++k) {
    Eigen::VectorXd y_seed;
    double z_seed;
    PhasePoint q = random_phase_point(rf, rng, &y_seed, &z_seed);
    CoefficientOptions opts;
    opts.y_seed = &y_seed;
    opts.z_seed = &z_seed;
    MateCoefficients mc = coefficients(rf, q, opts);
    for (int dir = 0; dir < 2; ++dir) {
      PhasePoint qp = q, qm = q;
      qp.p[dir] += step;
      qm.p[dir] -= step;
      MateCoefficients mp = coefficients(rf, qp, opts);
      MateCoefficients mm = coefficients(rf, qm, opts);
      Eigen::Matrix2d fd = (mp.a - mm.a) / (2 * step);
      CHECK((fd - mc.dp_a[dir]).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("closed-form dA/du matches a central difference of A over u") {
  GenFun rf = make_reflector();
  std::mt19937_64 rng(37);
  const double step = 1e-5;
  for (int k = 0; k < 25; ++k) {
    Eigen::VectorXd y_seed;
    double z_seed;
    PhasePoint q = random_phase_point(rf, rng, &y_seed, &z_seed);
    CoefficientOptions opts;
    opts.y_seed = &y_seed;
    opts.z_seed = &z_seed;
    MateCoefficients mc = coefficients(rf, q, opts);
    PhasePoint qp = q, qm = q;
    qp.u += step;
    qm.u -= step;
    MateCoefficients mp = coefficients(rf, qp, opts);
    MateCoefficients mm = coefficients(rf, qm, opts);
    Eigen::Matrix2d fd = (mp.a - mm.a) / (2 * step);
    CHECK((fd - mc.du_a).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("E equals the scaled Jacobian of the tilde map") {
  // g_z * D_x (g_y/g_z) = E^T, read from the inverse relation between the
  // coordinates; finite differences of the forward map against E.
  GenFun rf = make_reflector();
  std::mt19937_64 rng(41);
  const double step = 1e-6;
  for (int k = 0; k < 25; ++k) {
    Eigen::VectorXd y;
    double z;
    PhasePoint q = random_phase_point(rf, rng, &y, &z);
    GenDerivs d = rf.derivs(q.x, y, z, 2);
    Eigen::Matrix2d e = d.gxy - (d.gxz / d.gz) * d.gy.transpose();
    Eigen::Matrix2d jac_fd;
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd xp = q.x, xm = q.x;
      xp[c] += step;
      xm[c] -= step;
      GenDerivs dp = rf.derivs(xp, y, z, 1);
      GenDerivs dm = rf.derivs(xm, y, z, 1);
      Eigen::VectorXd diff = (dp.gy / dp.gz - dm.gy / dm.gz) / (2 * step);
      jac_fd.col(c) = diff;
    }
    CHECK((d.gz * jac_fd - e.transpose()).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("DppA symmetry in both index pairs") {
  GenFun rf = make_reflector();
  std::mt19937_64 rng(43);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd y_seed;
    double z_seed;
    PhasePoint q = random_phase_point(rf, rng, &y_seed, &z_seed);
    CoefficientOptions opts;
    opts.with_dpp_a = true;
    opts.y_seed = &y_seed;
    opts.z_seed = &z_seed;
    MateCoefficients mc = coefficients(rf, q, opts);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        CHECK((mc.dpp_a[a][b] - mc.dpp_a[b][a]).lpNorm<Eigen::Infinity>() < 1e-12);
        CHECK((mc.dpp_a[a][b] - mc.dpp_a[a][b].transpose()).lpNorm<Eigen::Infinity>() < 1e-9);
      }
    CHECK((mc.a - mc.a.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("check_a3 classifies the built-ins") {
  GenFun ma = make_ma();
  A3Report rep_ma = check_a3(ma, 100, 7, 8);
  CHECK(rep_ma.c_min == 0.0);  // DppA is identically zero, so exactly 0
  CHECK(rep_ma.verdict == 0);

  GenFun ot = make_quad_ot();
  A3Report rep_ot = check_a3(ot, 100, 7, 8);
  CHECK(rep_ot.c_min == 0.0);
  CHECK(rep_ot.verdict == 0);

  GenFun rf = make_reflector();
  A3Report rep_rf = check_a3(rf, 200, 7, 8);
  CHECK(rep_rf.c_min > 0.0);
  CHECK(rep_rf.verdict == 1);
  // hand value: the contraction equals 2 - 4(xi.eta)^2 = 2 on orthonormal
  // pairs, uniformly over the domain
  CHECK(rep_rf.c_min == doctest::Approx(2.0).epsilon(1e-6));

  // the opposite sign of the log cost fails A3 with the mirrored value
  DomainBox box = DomainBox::square(2, {-0.15, 0.15}, {0.55, 1.15}, {-1.5, 1.5}, {-0.5, 0.5}, 0.5);
  GenFun rf_neg = GenFun::parse("-log(norm(x-y)) - z", box);
  A3Report rep_neg = check_a3(rf_neg, 50, 7, 4);
  CHECK(rep_neg.verdict == -1);
  CHECK(rep_neg.c_min == doctest::Approx(-2.0).epsilon(1e-6));
}

TEST_CASE("check_a1star accepts the built-ins and A2 rejects the degenerate map") {
  GenFun ma = make_ma();
  CHECK(check_a1star(ma, 8, 8).injective);  // g_y/g_z = -x
  GenFun ot = make_quad_ot();
  CHECK(check_a1star(ot, 8, 8).injective);  // g_y/g_z = x - y

  // g = -z has g_y = 0: E vanishes, rejected before A1* can run
  DomainBox box = DomainBox::square(2, {-1, 1}, {-1, 1}, {-1, 1}, {-1, 1});
  CHECK_THROWS_AS(GenFun::parse("-z", box), GjeError);
  try {
    GenFun::parse("-z", box);
  } catch (const GjeError& e) {
    CHECK(e.code() == ErrorCode::A2Violation);
  }
}

TEST_CASE("tilde transform closed forms and round trip") {
  GenFun ma = make_ma();
  Eigen::VectorXd y0(2);
  y0 << 0.5, -0.25;
  double zh = 0.1;
  Eigen::VectorXd x(2);
  x << 0.3, 0.8;
  // g_y = x, g_z = -1 so xt = -x
  CHECK((to_tilde_point(ma, x, y0, zh) + x).norm() < 1e-14);

  GenFun ot = make_quad_ot();
  // g_y = x - y, g_z = -1 so xt = y0 - x ... sign: (x-y)/(-1) = y - x
  Eigen::VectorXd t = to_tilde_point(ot, x, y0, zh);
  CHECK((t - (y0 - x)).norm() < 1e-14);

  GenFun rf = make_reflector();
  Eigen::VectorXd yr(2);
  yr << 0.8, 0.9;
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> ux(-0.12, 0.12);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd xr(2);
    xr << ux(rng), ux(rng);
    Eigen::VectorXd xt = to_tilde_point(rf, xr, yr, 0.0);
    Eigen::VectorXd back = from_tilde_point(rf, xt, yr, 0.0, &xr);
    CHECK((back - xr).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("orthogonal vanishing: zero for constant-A built-ins") {
  GenFun ma = make_ma();
  Eigen::VectorXd y0(2);
  y0 << 0.2, 0.1;
  std::vector<Eigen::VectorXd> xs;
  for (double t : {-0.5, 0.0, 0.5}) {
    Eigen::VectorXd x(2);
    x << t, -t;
    xs.push_back(x);
  }
  CHECK(orthogonal_vanishing_defect(ma, y0, -0.3, xs) == 0.0);

  GenFun ot = make_quad_ot();
  Eigen::VectorXd y1(2);
  y1 << 0.4, -0.2;
  CHECK(orthogonal_vanishing_defect(ot, y1, -0.3, xs) < 1e-12);
}

TEST_CASE("orthogonal vanishing holds in tilde coordinates for the reflector") {
  GenFun rf = make_reflector();
  Eigen::VectorXd y0(2);
  y0 << 0.85, 0.95;
  double zh = 0.05;
  TildeGenFun tilde(rf, y0, zh);

  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> ux(-0.10, 0.10);
  std::vector<Eigen::VectorXd> xs_raw, xs_tilde;
  for (int k = 0; k < 12; ++k) {
    Eigen::VectorXd x(2);
    x << ux(rng), ux(rng);
    xs_raw.push_back(x);
    xs_tilde.push_back(tilde.to_tilde(x));
  }
  double tilde_defect = orthogonal_vanishing_defect(tilde, y0, zh, xs_tilde, 8);
  double raw_defect = orthogonal_vanishing_defect(rf, y0, zh, xs_raw, 8);
  CHECK(tilde_defect <= 1e-5);
  CHECK(raw_defect > 1e-2);  // the same contraction is O(1) in raw coordinates
}

TEST_CASE("tilde derivatives agree with finite differences of the composite") {
  GenFun rf = make_reflector();
  Eigen::VectorXd y0(2);
  y0 << 0.9, 0.8;
  double zh = 0.1;
  TildeGenFun tilde(rf, y0, zh);

  Eigen::VectorXd x(2);
  x << 0.05, -0.08;
  Eigen::VectorXd xt = tilde.to_tilde(x);
  Eigen::VectorXd y(2);
  y << 0.75, 1.0;
  double z = 0.2;

  GenDerivs d = tilde.derivs(xt, y, z, 3);
  const double step = 1e-5;
  auto eval_tilde = [&](const Eigen::VectorXd& q) { return tilde.derivs(q, y, z, 1).g; };
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd qp = xt, qm = xt;
    qp[i] += step;
    qm[i] -= step;
    double fd = (eval_tilde(qp) - eval_tilde(qm)) / (2 * step);
    CHECK(std::abs(fd - d.gx[i]) < 1e-7);
  }
  // second derivative via gradient differences
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd qp = xt, qm = xt;
      qp[j] += step;
      qm[j] -= step;
      double fd = (tilde.derivs(qp, y, z, 1).gx[i] - tilde.derivs(qm, y, z, 1).gx[i]) / (2 * step);
      CHECK(std::abs(fd - d.gxx(i, j)) < 1e-6);
    }
  // third-order blocks against y/z differences of gxx
  for (int r = 0; r < 2; ++r) {
    Eigen::VectorXd yp = y, ym = y;
    yp[r] += step;
    ym[r] -= step;
    Eigen::Matrix2d fd =
        (tilde.derivs(xt, yp, z, 2).gxx - tilde.derivs(xt, ym, z, 2).gxx) / (2 * step);
    CHECK((fd - d.gxxy[r]).lpNorm<Eigen::Infinity>() < 1e-5);
  }
  Eigen::Matrix2d fdz =
      (tilde.derivs(xt, y, z + step, 2).gxx - tilde.derivs(xt, y, z - step, 2).gxx) / (2 * step);
  CHECK((fdz - d.gxxz).lpNorm<Eigen::Infinity>() < 1e-5);
}

TEST_CASE("solve_yz error paths") {
  GenFun rf = make_reflector();
  // a phase point far outside the reachable (u,p) set
  Eigen::VectorXd x(2), p(2);
  x << 0.0, 0.0;
  p << 500.0, 0.0;
  CHECK_THROWS_AS(solve_yz(rf, x, 0.0, p), GjeError);
}
