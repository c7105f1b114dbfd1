#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "gjelab/errors.hpp"

namespace gjelab {

/// Uniform square-spacing 2D grid: node (i,j) sits at origin + h*(i,j).
struct GridSpec {
  Eigen::Vector2d origin{0.0, 0.0};
  double h{1.0};
  int nx{0}, ny{0};

  static GridSpec over_box(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, int nodes);

  Eigen::Vector2d node(int i, int j) const { return origin + h * Eigen::Vector2d(i, j); }
  int index(int i, int j) const { return j * nx + i; }
  int size() const { return nx * ny; }
  bool on_rim(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
  bool in_range(int i, int j) const { return i >= 0 && j >= 0 && i < nx && j < ny; }
  /// Nearest node to a point (clamped into range).
  void nearest(const Eigen::Vector2d& p, int& i, int& j) const;
};

/// Scalar function sampled on a GridSpec, with bilinear interpolation,
/// central-difference gradients and 9-point Hessians.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(GridSpec spec, std::vector<double> values);
  static GridFunction constant(const GridSpec& spec, double value);
  static GridFunction sample(const GridSpec& spec,
                             const std::function<double(const Eigen::Vector2d&)>& f);

  const GridSpec& spec() const { return spec_; }
  double at(int i, int j) const { return v_[spec_.index(i, j)]; }
  double& at(int i, int j) { return v_[spec_.index(i, j)]; }
  const std::vector<double>& values() const { return v_; }
  std::vector<double>& values() { return v_; }

  /// Bilinear interpolation; throws InterpolationOutOfRange outside the grid.
  double interp(const Eigen::Vector2d& p) const;
  bool covers(const Eigen::Vector2d& p) const;

  /// Central differences at interior nodes, one-sided on the rim.
  Eigen::Vector2d gradient_node(int i, int j) const;
  /// Gradient at an arbitrary point: bilinear blend of node gradients.
  Eigen::Vector2d gradient(const Eigen::Vector2d& p) const;

  /// 9-point Hessian at an interior node.
  Eigen::Matrix2d hessian_node(int i, int j) const;

  double min_value() const;
  double max_value() const;

 private:
  GridSpec spec_;
  std::vector<double> v_;
};

/// Verifies the discrete g-convexity certificate: for supports solved at the
/// given base nodes, u(x) >= g(x, y0, z0) - tol everywhere with equality at
/// the touch point. Returns the worst signed violation (negative = failure).
class GenFunBase;  // fwd
double gconvexity_certificate_defect(const GridFunction& u, const GenFunBase& gf,
                                     const std::vector<Eigen::Vector2d>& base_points);

}  // namespace gjelab
