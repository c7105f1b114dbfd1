#include "gjelab/regularity.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gjelab/numerics.hpp"

namespace gjelab {

double sharp_alpha(int n, double p) {
  if (n < 2) throw GjeError(ErrorCode::ConfigInvalid, "dimension must be >= 2");
  double thresh = 0.5 * (n + 1);
  if (!(p > thresh))
    throw GjeError(ErrorCode::RangeError,
                   "p must exceed (n+1)/2 = " + std::to_string(thresh));
  double beta = std::isinf(p) ? 1.0 : 1.0 - (n + 1) / (2.0 * p);
  return beta * (n + 1) / (2.0 * n * n + beta * (n - 1));
}

ExponentFit fit_exponent(const GridFunction& u, const GenFunBase& gf, const Eigen::Vector2d& x0,
                         const std::vector<double>& radii, int circle_samples) {
  if (radii.size() < 4)
    throw GjeError(ErrorCode::ConfigInvalid, "exponent fit needs at least 4 radii");
  double u0 = u.interp(x0);
  Eigen::Vector2d p0 = u.gradient(x0);
  YZSolution yz;
  try {
    yz = solve_yz(gf, x0, u0, p0);
  } catch (const GjeError& e) {
    throw GjeError(ErrorCode::SupportSolveFailed, e.what());
  }

  ExponentFit fit;
  fit.radii = radii;
  std::sort(fit.radii.begin(), fit.radii.end(), std::greater<double>());
  for (double r : fit.radii) {
    double sup = -std::numeric_limits<double>::infinity();
    double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < circle_samples; ++k) {
      double ang = 2.0 * M_PI * k / circle_samples;
      Eigen::Vector2d x = x0 + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
      double defect = u.interp(x) - gf.eval(x, yz.y, yz.z);
      sup = std::max(sup, defect);
      inf = std::min(inf, defect);
    }
    fit.sup_defect.push_back(sup);
    fit.inf_defect.push_back(inf);
  }

  std::vector<double> lr, ls, li;
  for (size_t k = 0; k < fit.radii.size(); ++k) {
    lr.push_back(std::log(fit.radii[k]));
    ls.push_back(std::log(std::max(fit.sup_defect[k], 1e-300)));
    if (fit.inf_defect[k] > 0)
      li.push_back(std::log(fit.inf_defect[k]));
    else
      fit.inf_positive = false;
  }
  LineFit sup_fit = fit_line(lr, ls);
  fit.alpha_hat = sup_fit.slope - 1.0;
  fit.r2_sup = sup_fit.r2;
  if (fit.inf_positive) {
    LineFit inf_fit = fit_line(lr, li);
    fit.gamma_hat = inf_fit.slope - 1.0;
    fit.r2_inf = inf_fit.r2;
  } else {
    fit.gamma_hat = std::numeric_limits<double>::quiet_NaN();
    fit.r2_inf = 0.0;
  }
  return fit;
}

DiniModulus dini_modulus(const GridFunction& f, const std::vector<double>& radii, uint64_t seed,
                         int max_exhaustive) {
  DiniModulus out;
  out.r = radii;
  std::sort(out.r.begin(), out.r.end());
  const GridSpec& spec = f.spec();

  std::vector<int> nodes;
  if (spec.size() <= max_exhaustive) {
    nodes.resize(spec.size());
    for (int i = 0; i < spec.size(); ++i) nodes[i] = i;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, spec.size() - 1);
    nodes.resize(max_exhaustive);
    for (int& n : nodes) n = pick(rng);
  }

  // bucket pairs by distance, then prefix-max to make omega nondecreasing
  std::vector<double> bucket(out.r.size(), 0.0);
  for (size_t a = 0; a < nodes.size(); ++a) {
    int ia = nodes[a] % spec.nx, ja = nodes[a] / spec.nx;
    Eigen::Vector2d xa = spec.node(ia, ja);
    double fa = f.at(ia, ja);
    for (size_t b = a + 1; b < nodes.size(); ++b) {
      int ib = nodes[b] % spec.nx, jb = nodes[b] / spec.nx;
      double dist = (spec.node(ib, jb) - xa).norm();
      auto it = std::upper_bound(out.r.begin(), out.r.end(), dist);
      if (it == out.r.end()) continue;
      size_t idx = it - out.r.begin();
      bucket[idx] = std::max(bucket[idx], std::abs(f.at(ib, jb) - fa));
    }
  }
  out.omega.resize(out.r.size());
  double acc = 0.0;
  for (size_t k = 0; k < out.r.size(); ++k) {
    acc = std::max(acc, bucket[k]);
    out.omega[k] = acc;
  }

  // trapezoid of omega(r)/r dr = omega d(log r)
  out.integral = 0.0;
  for (size_t k = 0; k + 1 < out.r.size(); ++k) {
    double dlog = std::log(out.r[k + 1] / out.r[k]);
    out.integral += 0.5 * (out.omega[k] + out.omega[k + 1]) * dlog;
  }
  // decay test: a jump keeps omega pinned near its sup all the way down
  double omega_max = out.omega.back();
  out.dini = !(omega_max > 0 && out.omega.front() > 0.5 * omega_max);
  return out;
}

MeasureConditionReport measure_condition_check(const MeasureSampler& nu, double p,
                                               const std::vector<Eigen::Vector2d>& xs,
                                               const std::vector<double>& eps_list) {
  const int n = 2;
  if (!(p > n))
    throw GjeError(ErrorCode::RangeError, "measure condition needs p in (n, infinity]");
  double expo = std::isinf(p) ? n : n * (1.0 - 1.0 / p);
  MeasureConditionReport rep;
  rep.eps = eps_list;
  std::sort(rep.eps.begin(), rep.eps.end(), std::greater<double>());
  for (double eps : rep.eps) {
    double worst = 0.0;
    for (const auto& x : xs) worst = std::max(worst, nu(x, eps) / std::pow(eps, expo));
    rep.ratio.push_back(worst);
    rep.worst_ratio = std::max(rep.worst_ratio, worst);
  }
  // monotone blow-up by 10x toward small eps flags an unbounded ratio
  bool inc = true;
  for (size_t k = 0; k + 1 < rep.ratio.size(); ++k) inc = inc && rep.ratio[k + 1] >= rep.ratio[k];
  if (inc && rep.ratio.size() >= 3 && rep.ratio.back() > 10.0 * rep.ratio.front())
    rep.bounded = false;
  return rep;
}

MeasureSampler density_ball_measure(std::function<double(const Eigen::Vector2d&)> density,
                                    int radial, int angular) {
  return [density, radial, angular](const Eigen::Vector2d& c, double eps) {
    double acc = 0.0;
    for (int i = 0; i < radial; ++i) {
      double r = (i + 0.5) * eps / radial;
      for (int k = 0; k < angular; ++k) {
        double ang = 2.0 * M_PI * (k + 0.5) / angular;
        Eigen::Vector2d x = c + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
        acc += density(x) * r;
      }
    }
    return acc * (eps / radial) * (2.0 * M_PI / angular);
  };
}

}  // namespace gjelab
