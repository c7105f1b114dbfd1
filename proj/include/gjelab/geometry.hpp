#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "gjelab/genfun.hpp"
#include "gjelab/grid.hpp"

namespace gjelab {

enum class CoordinateTag { Raw, Tilde };

/// Sublevel set {u < g(., y0, z0 - h)} of a g-convex grid function below a
/// lifted support, as a node mask plus an extracted boundary polygon.
struct Section {
  Eigen::Vector2d x0{0.0, 0.0};
  Eigen::VectorXd y0;
  double z0{0.0};
  double h{0.0};
  GridSpec grid;
  std::vector<uint8_t> mask;              // 1 on nodes strictly inside the section
  std::vector<Eigen::Vector2d> polygon;   // ccw boundary loop, sub-cell accurate
  CoordinateTag tag{CoordinateTag::Raw};
  double sup_defect{0.0};                 // max of g_h - u over the mask

  int mask_count() const;
  /// Bounding box of the mask in node indices: {imin, imax, jmin, jmax}.
  std::array<int, 4> mask_extent() const;
};

double polygon_area(const std::vector<Eigen::Vector2d>& poly);
bool point_in_polygon(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& p);
/// Max inward deviation of vertices from their hull, as a convexity defect.
double polygon_convexity_defect(const std::vector<Eigen::Vector2d>& poly);

/// Marching-squares zero contour of `field` (negative = inside) returning the
/// ccw loop that encloses `inside_point`. Only cells incident to the given
/// component mask contribute.
std::vector<Eigen::Vector2d> contour_polygon(const GridSpec& spec,
                                             const std::vector<double>& field,
                                             const std::vector<uint8_t>& component,
                                             const Eigen::Vector2d& inside_point);

/// Extract the section S_h(x0) of u under gf. The support (y0, z0) comes from
/// a Newton solve at (x0, u(x0), Du(x0)).
Section extract_section(const GridFunction& u, const GenFunBase& gf, const Eigen::Vector2d& x0,
                        double h);

/// Transform the polygon (and base point) of a raw section to tilde
/// coordinates attached to its own support.
Section section_to_tilde(const Section& s, const GenFunBase& gf);

/// Minimum-volume enclosing ellipsoid: center + orthonormal axes (columns of
/// `rotation`) + semi-axes sorted r[0] >= ... >= r[n-1].
struct Ellipsoid {
  Eigen::VectorXd center;
  Eigen::MatrixXd rotation;
  Eigen::VectorXd radii;

  int dim() const { return static_cast<int>(radii.size()); }
  /// (x-c)^T Q (x-c) with Q the shape matrix; inside iff <= 1.
  double level(const Eigen::VectorXd& p) const;
  bool contains(const Eigen::VectorXd& p, double tol = 1e-9) const;
  Eigen::VectorXd boundary_point(double angle) const;  // 2D convenience
};

/// Khachiyan-style iterative reweighting to relative tolerance `tol`;
/// throws DegenerateInput when the hull of the points has empty interior.
Ellipsoid min_enclosing_ellipsoid(const std::vector<Eigen::Vector2d>& points, double tol = 1e-8,
                                  int max_iter = 200000);

double good_shape(const Ellipsoid& e);

/// Worst violation of the 1/n sandwich: max over boundary samples of the
/// shrunk ellipsoid of their signed distance outside the point hull, and max
/// level-overshoot of the input points. Both should be ~0.
struct SandwichCheck {
  double shrunk_outside{0.0};   // how far the (1/n)-shrunk ellipsoid pokes out of the hull
  double points_outside{0.0};   // max(level(p) - 1, 0) over inputs
};
SandwichCheck sandwich_check(const Ellipsoid& e, const std::vector<Eigen::Vector2d>& points);

struct SectionEstimateRow {
  double h{0.0};
  double sup_defect{0.0};
  double area_raw{0.0};
  double nu{0.0};          // integral of f over the section
  double area_tilde{0.0};
  double r1{0.0}, rn{0.0};
  double ratio_volume{0.0};     // h^n / (|S_h| nu(S_h))
  double ratio_density{0.0};    // h^n / (lambda |S_h|^2)
  double ratio_axes{0.0};       // h^{n/2} / (r1...rn)
  double ratio_shape{0.0};      // h r1^2 / rn^2
  double convexity_defect{0.0}; // tilde polygon, absolute length units
  double e_eig_ratio{0.0};      // max/min |eigenvalue| of E over the section
};

struct SectionEstimates {
  std::vector<SectionEstimateRow> rows;
  bool drift_flag{false};          // some ratio moved monotonically by >10x
  std::string drifting_column;
};

SectionEstimates verify_section_estimates(const GridFunction& u, const GenFunBase& gf,
                                          const Eigen::Vector2d& x0,
                                          const std::vector<double>& h_list,
                                          const std::function<double(const Eigen::Vector2d&)>& f,
                                          double lambda, double Lambda);

/// Integral of f over {field < 0} with cell weights; boundary cells are
/// sub-sampled on an 8x8 lattice of the bilinear interpolant.
double mask_integral(const GridSpec& spec, const std::vector<double>& field,
                     const std::vector<uint8_t>& component,
                     const std::function<double(const Eigen::Vector2d&)>& f);

/// Normalized section data: v on the image of the section under
/// x_bar = D(r)^{-1} R^T (xt - c), with B_{1/n} subset U subset B_1.
struct NormalizedSection {
  GridFunction v;                  // sampled on a grid covering [-1,1]^2
  std::vector<uint8_t> mask;       // nodes inside T(S_h)
  Ellipsoid ellipsoid;             // of the tilde polygon
  Eigen::VectorXd y0;
  double z0{0.0}, h{0.0};
  double inf_v{0.0};
  double boundary_max_abs_v{0.0};
  double gz_bound{0.0};            // C with C^{-1} <= |inf v| <= C
  std::vector<Eigen::Vector2d> polygon_bar;  // section boundary in x_bar coordinates

  /// Map x_bar -> tilde coordinates.
  Eigen::Vector2d bar_to_tilde(const Eigen::Vector2d& xb) const;
};

/// Coefficient evaluators for the normalized equation
/// det[D^2 v - A_bar(., v, Dv)] = B_bar.
struct NormalizedCoefficients {
  std::function<Eigen::Matrix2d(const Eigen::Vector2d&, double, const Eigen::Vector2d&)> a_bar;
  std::function<double(const Eigen::Vector2d&, double, const Eigen::Vector2d&)> b_bar;
};

NormalizedSection normalize_section(const GridFunction& u, const GenFun& gf, const Section& raw,
                                    int v_grid_nodes = 65);

NormalizedCoefficients normalized_coefficients(const GridFunction& u, const GenFun& gf,
                                               const NormalizedSection& ns,
                                               const std::function<double(const Eigen::Vector2d&)>& f);

/// Max |det^+[D^2_h v - A_bar] - B_bar| over interior mask nodes.
double normalized_equation_residual(const NormalizedSection& ns, const NormalizedCoefficients& nc);

/// Reconstruct u on the section from the normalized v (involution check).
double denormalize_defect(const GridFunction& u, const GenFun& gf, const Section& raw,
                          const NormalizedSection& ns);

}  // namespace gjelab
