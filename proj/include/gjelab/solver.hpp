#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "gjelab/geometry.hpp"
#include "gjelab/genfun.hpp"
#include "gjelab/grid.hpp"

namespace gjelab {

/// Solver-facing view of the MATE coefficients at a phase point: A, det E and
/// the derivatives the Newton linearization consumes. Supports the cascade
/// rescaling A_bar(x,u,p) = A(sx x, su u, sp p) through the scale factors.
class CoefficientField {
 public:
  struct Node {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    double det_e{1.0};
    Eigen::Matrix2d du_a = Eigen::Matrix2d::Zero();
    std::array<Eigen::Matrix2d, 2> dp_a{Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero()};
  };
  struct Cache {
    Eigen::VectorXd y;
    double z{0.0};
    bool valid{false};
  };

  explicit CoefficientField(const GenFunBase& gf);
  CoefficientField scaled(double x_scale, double u_scale, double p_scale) const;

  /// True when A and det E are position-independent (no Y/Z solve needed).
  bool constant() const { return constant_; }

  Node eval(const Eigen::Vector2d& x, double u, const Eigen::Vector2d& p, Cache* cache,
            bool with_derivatives) const;

  const GenFunBase& genfun() const { return *gf_; }

 private:
  const GenFunBase* gf_;
  double sx_{1.0}, su_{1.0}, sp_{1.0};
  bool constant_{false};
  Node constant_node_;
};

/// Sub-cell Dirichlet data for masked domains: where a stencil leg crosses
/// the true boundary curve at fraction theta of the spacing, the outside
/// value is the linear extrapolation through the exact boundary value,
/// which removes the O(1) second-derivative layer of the plain node mask.
struct BoundaryFit {
  // directions: 0:+x 1:-x 2:+y 3:-y 4:(+,+) 5:(-,+) 6:(+,-) 7:(-,-)
  std::vector<std::array<double, 8>> theta;
  std::vector<std::array<double, 8>> value;
  bool active{false};

  static int dir_of(int a, int b);
};

/// Build the sub-cell boundary data of a section mask. `defect` must be a
/// continuum-accurate signed distance surrogate (negative inside); crossings
/// are located by bisection along each stencil leg and the Dirichlet values
/// are taken from `boundary_value` at those points.
BoundaryFit fit_section_boundary(const GridSpec& spec,
                                 const std::function<double(const Eigen::Vector2d&)>& defect,
                                 const std::vector<uint8_t>& mask,
                                 const std::function<double(const Eigen::Vector2d&)>& boundary_value);

struct DirichletProblem {
  const GenFunBase* gf{nullptr};
  GridSpec grid;
  /// 1 = unknown (solve here); empty means all off-rim nodes. Unknown nodes
  /// must not touch the grid rim.
  std::vector<uint8_t> unknown;
  /// Dirichlet extension: evaluated at every non-unknown node.
  std::function<double(const Eigen::Vector2d&)> boundary;
  /// Density f > 0; the equation solved is det^+[D^2u - A] = |det E| f.
  std::function<double(const Eigen::Vector2d&)> f;
  const GridFunction* initial{nullptr};
  double tol{1e-8};
  int max_newton{50};
  double clamp_delta{1e-10};
  bool poisson_init{true};
  /// Optional rescaled coefficient view; defaults to the plain field of gf.
  const CoefficientField* field{nullptr};
  /// Optional sub-cell boundary data for masked domains.
  const BoundaryFit* boundary_fit{nullptr};
};

struct SolveReport {
  GridFunction u;
  double residual_inf{0.0};
  int newton_iters{0};
  double min_eigen_w{0.0};
  bool converged{false};
  int continuation_stages{0};
};

/// Damped Newton on the filtered operator; falls back to continuation in f
/// when the direct solve stalls. Throws NewtonDiverged / EllipticityLost /
/// NonpositiveRHS.
SolveReport solve_dirichlet(const DirichletProblem& problem);

struct CascadeState {
  int k{0};
  double hk{0.0};
  Section section;          // U_k extracted from the ambient solution
  double fk{0.0};           // inf of f over U_k
  double omega_k{0.0};      // oscillation of f over U_k
  GridFunction uk;          // stage solution (ambient values outside U_k)
  Eigen::Matrix2d d2_x0 = Eigen::Matrix2d::Zero();
  double d2_x0_norm{0.0};
  std::vector<uint8_t> v_tau_mask;  // V_k^{tau0}
  double sup_d2_v_tau{0.0};
  bool x0_in_v_tau{false};
};

/// Stage-k constant-RHS approximating problem on U_k = {u < g(., y0, z0 - h0 4^-k)}.
CascadeState approximating_problem(const GridFunction& u, const GenFunBase& gf,
                                   const std::function<double(const Eigen::Vector2d&)>& f,
                                   const Eigen::Vector2d& x0, int k, double tau0, double h0);

/// U_{k+1} subset V_k^{tau0} as node masks.
bool cascade_containment(const CascadeState& prev, const CascadeState& next);

struct RescaledStage {
  GridFunction u_bar;          // 4^k u_k(x/2^k) on the dilated grid
  CoefficientField field_bar;  // A(2^-k x, 4^-k u, 2^-k p)
  double hessian_defect{0.0};  // max |D^2 u_bar - D^2 u_k| over interior nodes
};

RescaledStage rescale_stage(const CascadeState& state, const GenFunBase& gf);

struct PogorelovRow {
  int grid_n{0};
  double tau{0.0};
  double sup_d2{0.0};
};

struct PogorelovStudy {
  std::vector<PogorelovRow> rows;
  bool stable{true};          // < 25% growth per refinement for tau <= 0.75
  double worst_growth{1.0};
};

/// Constant-RHS Dirichlet solve on the section S_h of the ambient function,
/// boundary data the lifted support, repeated over grid refinements; reports
/// sup |D^2 u| over the inner sections S_{tau h}.
PogorelovStudy pogorelov_check(const GenFunBase& gf,
                               const std::function<double(const Eigen::Vector2d&)>& ambient_u,
                               const Eigen::Vector2d& x0, double h, double f0,
                               const std::vector<double>& taus, const std::vector<int>& grids,
                               const Eigen::Vector2d& dom_lo, const Eigen::Vector2d& dom_hi);

struct ShapeRow {
  double h{0.0};
  double d2_norm{0.0};
  double d2_min_eig{0.0};
  double shape{0.0};           // good shape constant of the tilde section
  double contain_ratio{0.0};   // sup over the section of |xt - xt0| / sqrt(h)
};

std::vector<ShapeRow> shape_derivative_experiment(const GridFunction& u, const GenFunBase& gf,
                                                  const Eigen::Vector2d& x0,
                                                  const std::vector<double>& h_list);

}  // namespace gjelab
