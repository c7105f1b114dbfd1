#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "gjelab/genfun.hpp"
#include "gjelab/grid.hpp"

namespace gjelab {

/// Sharp Holder exponent for solutions with L^p data:
/// alpha = beta (n+1) / (2 n^2 + beta (n-1)), beta = 1 - (n+1)/(2p).
/// p = infinity is allowed and gives 1/(2n-1). Throws for p <= (n+1)/2.
double sharp_alpha(int n, double p);

struct ExponentFit {
  std::vector<double> radii;
  std::vector<double> sup_defect;   // sup over |x-x0| = r of u - support
  std::vector<double> inf_defect;   // inf over the same circles
  double alpha_hat{0.0};            // fitted sup-side exponent minus 1
  double gamma_hat{0.0};            // fitted inf-side exponent minus 1
  double r2_sup{0.0};
  double r2_inf{0.0};
  bool inf_positive{true};          // false when some circle touches the support
};

/// Least-squares slope of log sup_{|x-x0|=r}(u - g(., y0, z0)) against log r.
/// Needs at least 4 radii, all circles inside the grid.
ExponentFit fit_exponent(const GridFunction& u, const GenFunBase& gf, const Eigen::Vector2d& x0,
                         const std::vector<double>& radii, int circle_samples = 512);

struct DiniModulus {
  std::vector<double> r;
  std::vector<double> omega;   // nondecreasing oscillation modulus
  double integral{0.0};        // trapezoid of omega(r)/r over [r_min, r_max]
  bool dini{true};             // false when the modulus does not decay
};

/// Oscillation modulus of a grid function by pair bucketing; exhaustive for
/// small grids, seeded sampling above `max_exhaustive` nodes.
DiniModulus dini_modulus(const GridFunction& f, const std::vector<double>& radii,
                         uint64_t seed = 11, int max_exhaustive = 4096);

using MeasureSampler = std::function<double(const Eigen::Vector2d&, double)>;  // nu(B_eps(x))

struct MeasureConditionReport {
  double worst_ratio{0.0};
  bool bounded{true};  // false when the ratio blows up monotonically as eps -> 0
  std::vector<double> eps;
  std::vector<double> ratio;  // worst over the x list, per eps
};

/// sup over samples of nu(B_eps(x)) / eps^{n(1-1/p)} for n = 2.
MeasureConditionReport measure_condition_check(const MeasureSampler& nu, double p,
                                               const std::vector<Eigen::Vector2d>& xs,
                                               const std::vector<double>& eps_list);

/// nu(B_eps(x)) for an absolutely continuous measure given by a density,
/// midpoint polar quadrature (handles integrable center singularities).
MeasureSampler density_ball_measure(std::function<double(const Eigen::Vector2d&)> density,
                                    int radial = 64, int angular = 64);

}  // namespace gjelab
