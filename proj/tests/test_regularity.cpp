#include <doctest.h>

#include <cmath>

#include "builtins.hpp"
#include "gjelab/regularity.hpp"

using namespace gjelab;
using gjelab::testing::make_ma;

namespace {

std::vector<double> log_radii(double r_min, double r_max, int count) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k)
    out.push_back(r_min * std::pow(r_max / r_min, double(k) / (count - 1)));
  return out;
}

}  // namespace

TEST_CASE("sharp exponent formula values") {
  CHECK(sharp_alpha(2, std::numeric_limits<double>::infinity()) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // n=2, p=3: beta = 1/2, alpha = (3/2)/(8.5) = 3/17
  CHECK(sharp_alpha(2, 3.0) == doctest::Approx(3.0 / 17.0).epsilon(1e-15));
  CHECK_THROWS_AS(sharp_alpha(2, 1.5), GjeError);
  CHECK_THROWS_AS(sharp_alpha(2, 1.0), GjeError);
}

TEST_CASE("sharp exponent is monotone in p and continuous at infinity") {
  double prev = 0.0;
  for (double p : {1.6, 2.0, 3.0, 5.0, 10.0, 100.0, 1e6}) {
    double a = sharp_alpha(2, p);
    CHECK(a > prev);
    prev = a;
  }
  CHECK(std::abs(sharp_alpha(2, 1e9) - 1.0 / 3.0) < 1e-6);
  CHECK(sharp_alpha(3, std::numeric_limits<double>::infinity()) == doctest::Approx(0.2));
}

TEST_CASE("power functions fit their own exponents") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 257);

  GridFunction u15 = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return std::pow(x.norm(), 1.5);
  });
  auto radii = log_radii(4 * spec.h, 0.5, 12);
  ExponentFit f15 = fit_exponent(u15, ma, {0.0, 0.0}, radii);
  CHECK(std::abs(f15.alpha_hat - 0.5) < 0.02);
  CHECK(f15.r2_sup > 0.99);

  GridFunction uq = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm();
  });
  ExponentFit fq = fit_exponent(uq, ma, {0.0, 0.0}, radii);
  CHECK(std::abs(fq.alpha_hat - 1.0) < 0.02);
  CHECK(std::abs(fq.gamma_hat - 1.0) < 0.02);
}

TEST_CASE("radial family respects the sharp exponent one-sidedly") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 257);
  auto radii = log_radii(4 * spec.h, 0.5, 12);
  for (double a : {0.4, 0.6, 0.8}) {
    GridFunction u = GridFunction::sample(spec, [a](const Eigen::Vector2d& x) {
      return std::pow(x.norm(), 1.0 + a);
    });
    ExponentFit fit = fit_exponent(u, ma, {0.0, 0.0}, radii);
    CHECK(std::abs(fit.alpha_hat - a) < 0.02);
    // f = a(1+a)^2 r^{2(a-1)} lies in L^p exactly for p < 1/(1-a)
    double p_star = 1.0 / (1.0 - a);
    for (double frac : {0.35, 0.6, 0.85, 0.98}) {
      double p = 1.5 + frac * (p_star - 1.5);
      if (p <= 1.5) continue;
      CHECK(fit.alpha_hat >= sharp_alpha(2, p) - 0.02);
    }
  }
}

TEST_CASE("quadratic regularization pins the fitted exponent at one") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 257);
  // keep the top radius small so the quartic correction r^4/r^2 stays below
  // the fit tolerance
  auto radii = log_radii(4 * spec.h, 0.25, 10);
  const double eps = 1.0;
  auto bases = std::vector<std::function<double(const Eigen::Vector2d&)>>{
      [](const Eigen::Vector2d&) { return 0.0; },
      [](const Eigen::Vector2d& x) { return x.x() * x.x(); },
      [](const Eigen::Vector2d& x) { return std::pow(x.squaredNorm(), 2.0); },
      [](const Eigen::Vector2d& x) { return std::exp(0.5 * x.squaredNorm()) - 1.0; },
  };
  for (const auto& base : bases) {
    GridFunction u = GridFunction::sample(spec, [&](const Eigen::Vector2d& x) {
      return base(x) + eps * x.squaredNorm();
    });
    ExponentFit fit = fit_exponent(u, ma, {0.0, 0.0}, radii);
    CHECK(std::abs(fit.alpha_hat - 1.0) < 0.04);
    CHECK(std::abs(fit.gamma_hat - 1.0) < 0.04);
  }
}

TEST_CASE("too few radii are rejected") {
  GenFun ma = make_ma();
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 65);
  GridFunction u = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 0.5 * x.squaredNorm();
  });
  CHECK_THROWS_AS(fit_exponent(u, ma, {0.0, 0.0}, {0.1, 0.2, 0.3}), GjeError);
}

TEST_CASE("oscillation modulus of a Holder function gives the analytic integral") {
  GridSpec spec = GridSpec::over_box({0, 0}, {1, 1}, 61);
  const double alpha = 0.5;
  GridFunction f = GridFunction::sample(spec, [alpha](const Eigen::Vector2d& x) {
    return std::pow(x.x(), alpha);
  });
  std::vector<double> radii;
  for (double r = 0.02; r <= 1.0 + 1e-9; r *= std::pow(50.0, 1.0 / 24.0)) radii.push_back(r);
  DiniModulus dm = dini_modulus(f, radii);
  CHECK(dm.dini);
  // omega(r) = r^alpha on [eps, 1]: integral = (1 - eps^alpha)/alpha
  double expected = (1.0 - std::pow(radii.front(), alpha)) / alpha;
  CHECK(dm.integral == doctest::Approx(expected).epsilon(0.08));
  for (size_t k = 0; k + 1 < dm.omega.size(); ++k) CHECK(dm.omega[k] <= dm.omega[k + 1] + 1e-15);
}

TEST_CASE("jump densities are flagged non-Dini, log-type stays Dini") {
  GridSpec spec = GridSpec::over_box({-1, -1}, {1, 1}, 61);
  GridFunction jump = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return x.x() > 0 ? 1.0 : 0.0;
  });
  std::vector<double> radii;
  // smallest radius above the node spacing so every bucket sees pairs
  for (double r = 0.05; r <= 1.0; r *= 1.4) radii.push_back(r);
  DiniModulus dj = dini_modulus(jump, radii);
  CHECK_FALSE(dj.dini);

  GridFunction slow = GridFunction::sample(spec, [](const Eigen::Vector2d& x) {
    return 1.0 + 0.1 / std::log(std::exp(1.0) + 1.0 / std::max(x.norm(), 1e-14));
  });
  DiniModulus ds = dini_modulus(slow, radii);
  CHECK(ds.dini);
  CHECK(ds.integral > 0.0);
  CHECK(ds.integral < 1.0);
}

TEST_CASE("measure growth condition") {
  std::vector<Eigen::Vector2d> xs{{0.0, 0.0}, {0.2, -0.1}, {-0.3, 0.25}};
  std::vector<double> eps{0.4, 0.2, 0.1, 0.05, 0.025};

  auto lebesgue = density_ball_measure([](const Eigen::Vector2d&) { return 1.0; });
  MeasureConditionReport lr =
      measure_condition_check(lebesgue, std::numeric_limits<double>::infinity(), xs, eps);
  CHECK(lr.bounded);
  for (double ratio : lr.ratio) CHECK(ratio == doctest::Approx(M_PI).epsilon(1e-6));

  // density r^{-s} with s < n/p keeps the ratio bounded
  const double s = 0.4, p = 4.0;
  auto singular = density_ball_measure([s](const Eigen::Vector2d& x) {
    return std::pow(std::max(x.norm(), 1e-12), -s);
  });
  MeasureConditionReport sr = measure_condition_check(singular, p, {{0.0, 0.0}}, eps);
  CHECK(sr.bounded);

  // a point mass blows up at every admissible rate
  MeasureSampler dirac = [](const Eigen::Vector2d& c, double eps_val) {
    return (c.norm() <= eps_val) ? 1.0 : 0.0;
  };
  MeasureConditionReport dr = measure_condition_check(dirac, 4.0, {{0.0, 0.0}}, eps);
  CHECK_FALSE(dr.bounded);
}
