#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "gjelab/genfun.hpp"
#include "gjelab/grid.hpp"

namespace gjelab {

/// Unique z with g(x, y, z) = u (g is strictly decreasing in z), safeguarded
/// Newton inside the declared z-interval to |g - u| <= 1e-12. Throws
/// RangeError when u lies outside g(x, y, I).
double z_inverse(const GenFunBase& gf, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                 double u, double tol = 1e-12, const double* z_seed = nullptr);

/// Dual function on a y-grid over the V box, v(y) = max over grid x of the
/// z-solve of g(x, y, z) = u(x), with back-pointers to the attaining x node.
struct DualFunction {
  GridSpec grid;                // over the V box
  std::vector<double> values;
  std::vector<int> back_ptr;    // flat index into u's grid, -1 where empty
  std::vector<uint8_t> ok;      // 0 where no admissible x existed
  uint64_t source_hash{0};      // fingerprint of the primal samples

  double at(int i, int j) const { return values[grid.index(i, j)]; }
};

struct EnvelopeOptions {
  int dual_nodes{65};
  /// Coarse-scan stride for the inner maximization; 1 = exhaustive scan.
  /// Larger strides scan a subsampled lattice and then polish by hill
  /// climbing, exact for landscapes whose basin is wider than the stride.
  int stride{1};
  int threads{0};  // 0 = hardware concurrency
  /// Restrict the dual grid to a sub-box of V (both zero = use the V box).
  Eigen::Vector2d v_lo{0.0, 0.0}, v_hi{0.0, 0.0};
};

DualFunction g_star_transform(const GridFunction& u, const GenFunBase& gf,
                              const EnvelopeOptions& opts = {});

struct DoubleTransformReport {
  GridFunction u_hat;        // sup_y g(., y, v(y)) on u's grid
  double max_abs_defect{0.0};
  double envelope_gap{0.0};  // max of u - u_hat (positive where u fails g-convexity)
};

DoubleTransformReport double_transform_check(const GridFunction& u, const GenFunBase& gf,
                                             const EnvelopeOptions& opts = {});

/// Taylor blocks of the generating function at a base point after the affine
/// renormalization: base translation, z-reparametrization zt = g(x0,y0,z0) -
/// g(x0,y,z), y-map normalizing the mixed block to the identity, and an
/// affine kill in x. Coefficients are reported in the monomial basis (block
/// M means the expansion carries sum M_{ij} v_i w_j etc). The expansion form
/// x.y - z + cubic corrections says the xx, yy, xz, yz, xxx, xxy and yyy
/// blocks vanish; `residual` is the worst magnitude among those.
struct NormalFormReport {
  Eigen::Matrix2d xy;                // unit by construction of the y-map
  double z_coef{0.0};                // -1 by construction
  Eigen::Matrix2d xx, yy;            // claimed zero (xx survives for costs
                                     // with intrinsic x-curvature; reported)
  Eigen::Vector2d xz, yz;            // claimed zero
  double zz{0.0};
  std::vector<Eigen::Matrix2d> xyy;  // [i](j,k): x_i y_j y_k corrections
  Eigen::Matrix2d xxz, xyz, yyz;     // cubic z-corrections
  std::vector<Eigen::Matrix2d> xxy;  // [k](i,j), claimed zero
  std::vector<Eigen::Matrix2d> xxx;  // [k](i,j), claimed zero
  std::vector<Eigen::Matrix2d> yyy;  // [k](i,j), claimed zero
  Eigen::Vector2d xzz, yzz;          // free z-dependent corrections
  double zzz{0.0};
  double residual{0.0};
};

NormalFormReport gen_exp_normal_form(const GenFun& gf, const Eigen::VectorXd& x0,
                                     const Eigen::VectorXd& y0, double z0, double fd_step = 0.02);

}  // namespace gjelab
