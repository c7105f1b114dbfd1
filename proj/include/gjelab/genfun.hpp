#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "gjelab/expr.hpp"

namespace gjelab {

/// Derivative bundle of a generating function at a single (x, y, z).
/// Subscripts before the comma are x-derivatives, after are y-derivatives;
/// z-derivatives are spelled out. Order-3 entries are only filled on request.
struct GenDerivs {
  double g{0.0};
  double gz{0.0};
  Eigen::VectorXd gx;   // g_i
  Eigen::VectorXd gy;   // g_{,j}
  Eigen::MatrixXd gxx;  // g_{ij}
  Eigen::MatrixXd gxy;  // g_{i,j}  (row: x index, col: y index)
  Eigen::VectorXd gxz;  // g_{i,z}
  std::vector<Eigen::MatrixXd> gxxy;  // gxxy[r](i,j) = g_{ij,r}
  Eigen::MatrixXd gxxz;               // g_{ij,z}
  int order{0};
};

/// Abstract generating function: everything the GJE machinery needs,
/// independent of whether the function is given symbolically or as a
/// coordinate transform of another one.
class GenFunBase {
 public:
  virtual ~GenFunBase() = default;
  virtual int dim() const = 0;
  /// Derivatives at (x,y,z); order in {1,2,3} controls how much is filled.
  virtual GenDerivs derivs(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z,
                           int order) const = 0;
  virtual const DomainBox& box() const = 0;
  virtual bool x_in_domain(const Eigen::VectorXd& x, double tol = 0.0) const = 0;

  virtual double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const;
};

/// Symbolic generating function: expression tree plus its cached derivative
/// trees (to total order 3 in the patterns the coefficient assembly needs;
/// arbitrary multi-indices up to order 4 through `derivative_tree`).
/// Immutable after construction; the generic-tree cache is mutex guarded.
class GenFun : public GenFunBase {
 public:
  GenFun(Expr g, DomainBox box, bool run_a2_check = true, uint64_t a2_seed = 20240901,
         int a2_samples = 256);

  static GenFun parse(std::string_view src, DomainBox box);

  int dim() const override { return box_.n; }
  GenDerivs derivs(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z,
                   int order) const override;
  const DomainBox& box() const override { return box_; }
  bool x_in_domain(const Eigen::VectorXd& x, double tol = 0.0) const override;

  const Expr& expr() const { return g_; }
  double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const override;
  /// Exact derivative tree for an arbitrary multi-index (total order <= 4).
  const Expr& derivative_tree(std::vector<Var> multi) const;
  double eval_derivative(std::vector<Var> multi, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y, double z) const;

  /// Samples Gamma and verifies g_z < 0 and det E != 0; throws A2Violation.
  void check_a2(uint64_t seed, int samples) const;

  bool e_matrix_is_constant() const { return e_constant_; }
  bool a_matrix_is_constant() const { return a_constant_; }
  /// True when g is affine in z; the slope then never changes.
  bool affine_in_z(double& slope) const {
    slope = z_slope_;
    return z_affine_;
  }

 private:
  EvalPoint pt(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const;

  Expr g_;
  DomainBox box_;
  // precomputed trees, indexed [i], [i][j] with i<=j flattened
  std::vector<Expr> dx_, dy_, dxz_;
  Expr dz_;
  std::vector<Expr> dxx_, dxy_;               // dxx_: i<=j upper triangle; dxy_: full n*n
  std::vector<std::vector<Expr>> dxxy_;       // [r][upper-tri(i,j)]
  std::vector<Expr> dxxz_;                    // upper-tri(i,j)
  bool e_constant_{false};
  bool a_constant_{false};
  bool z_affine_{false};
  double z_slope_{0.0};

  mutable std::map<std::vector<Var>, Expr> tree_cache_;
  mutable std::mutex cache_mu_;
};

struct PhasePoint {
  Eigen::VectorXd x;
  double u{0.0};
  Eigen::VectorXd p;
};

struct YZSolution {
  Eigen::VectorXd y;
  double z{0.0};
  int iterations{0};
  double residual{0.0};
};

/// Newton solve of g(x,y,z) = u, g_x(x,y,z) = p for (y,z).
/// Seeded from the box center unless told otherwise. Residual target is
/// |g-u| + |g_x-p|_inf <= 1e-10 within 50 damped iterations.
YZSolution solve_yz(const GenFunBase& gf, const Eigen::VectorXd& x, double u,
                    const Eigen::VectorXd& p, const Eigen::VectorXd* y_seed = nullptr,
                    const double* z_seed = nullptr, double tol = 1e-10, int max_iter = 50);

struct MateCoefficients {
  Eigen::VectorXd y;
  double z{0.0};
  Eigen::MatrixXd e;
  double det_e{0.0};
  Eigen::MatrixXd a;
  Eigen::MatrixXd du_a;                       // dA/du (closed form)
  std::vector<Eigen::MatrixXd> dp_a;          // dp_a[k](i,j) = D_{p_k} A_{ij}
  std::vector<std::vector<Eigen::MatrixXd>> dpp_a;  // dpp_a[k][l](i,j), symmetrized in (k,l)
  bool has_dpp{false};
};

struct CoefficientOptions {
  bool with_dp_a{true};
  bool with_dpp_a{false};
  const Eigen::VectorXd* y_seed{nullptr};
  const double* z_seed{nullptr};
  double dpp_step{1e-4};  // central step in p for the D_pp A tensor
};

/// Assemble E, A and the p-derivative tensors at a phase point.
/// D_p A uses the closed-form contraction through E^{-1}; D_pp A is one
/// central difference of that closed form, re-solving (Y,Z) at each shift.
MateCoefficients coefficients(const GenFunBase& gf, const PhasePoint& q,
                              const CoefficientOptions& opts = {});

struct A3Report {
  double c_min{0.0};
  PhasePoint argmin;
  Eigen::VectorXd xi, eta;
  int samples{0};
  int pairs_per_sample{0};
  // verdict: +1 strict A3, 0 A3w, -1 fail
  int verdict{0};
  double tol{1e-8};
};

/// Sample Gamma, form DppA xi xi eta eta over random orthonormal pairs and
/// report the minimum. Deterministic for a fixed seed.
A3Report check_a3(const GenFun& gf, int samples = 2000, uint64_t seed = 1,
                  int pairs_per_sample = 16, double tol = 1e-8);

struct A1StarReport {
  bool injective{true};
  Eigen::VectorXd witness_x1, witness_x2, witness_y;
  double witness_z{0.0};
  int samples{0};
};

/// Sampling check of injectivity of x -> g_y/g_z(x,y,z): pairwise
/// distinctness over an x-grid for sampled (y,z). Evidence, not proof.
A1StarReport check_a1star(const GenFun& gf, int yz_samples = 24, int x_grid = 12,
                          uint64_t seed = 2, double collision_tol = 1e-10);

/// Max over the given x samples and random orthonormal pairs (xi, eta) of
/// |D_p A_{ij}(x, g_h(x), Dg_h(x)) xi_i xi_j eta_k| at the support jet of
/// g_h = g(., y0, zh). In coordinates where the support transform is the
/// identity this contracts to zero.
double orthogonal_vanishing_defect(const GenFunBase& gf, const Eigen::VectorXd& y0, double zh,
                                   const std::vector<Eigen::VectorXd>& x_samples,
                                   int pairs = 8, uint64_t seed = 3);

/// Forward coordinate change x -> g_y/g_z(x, y0, zh) and its Newton inverse.
Eigen::VectorXd to_tilde_point(const GenFunBase& gf, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y0, double zh);
Eigen::VectorXd from_tilde_point(const GenFunBase& gf, const Eigen::VectorXd& x_tilde,
                                 const Eigen::VectorXd& y0, double zh,
                                 const Eigen::VectorXd* x_seed = nullptr, double tol = 1e-12,
                                 int max_iter = 60);

/// The generating function re-expressed in the tilde coordinates attached to
/// (y0, zh): gt(xt, y, z) = g(X(xt), y, z) with X the inverse of the forward
/// map. Derivatives come from the chain rule with the exact symbolic
/// derivatives of the base function; nothing here is finite-differenced.
class TildeGenFun : public GenFunBase {
 public:
  TildeGenFun(const GenFun& base, Eigen::VectorXd y0, double zh);

  int dim() const override { return base_.dim(); }
  GenDerivs derivs(const Eigen::VectorXd& x_tilde, const Eigen::VectorXd& y, double z,
                   int order) const override;
  const DomainBox& box() const override { return base_.box(); }
  bool x_in_domain(const Eigen::VectorXd& x_tilde, double tol = 0.0) const override;

  double eval(const Eigen::VectorXd& x_tilde, const Eigen::VectorXd& y, double z) const override;
  Eigen::VectorXd to_tilde(const Eigen::VectorXd& x_raw) const;
  Eigen::VectorXd from_tilde(const Eigen::VectorXd& x_tilde,
                             const Eigen::VectorXd* x_seed = nullptr) const;

 private:
  const GenFun& base_;
  Eigen::VectorXd y0_;
  double zh_;
  Eigen::VectorXd x_center_;  // inversion seed
};

}  // namespace gjelab
