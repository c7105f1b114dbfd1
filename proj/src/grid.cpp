#include "gjelab/grid.hpp"

#include <algorithm>
#include <cmath>

#include "gjelab/genfun.hpp"

namespace gjelab {

GridSpec GridSpec::over_box(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, int nodes) {
  if (nodes < 3) throw GjeError(ErrorCode::InvalidDomainBox, "grid needs at least 3 nodes per axis");
  GridSpec s;
  s.origin = lo;
  s.nx = nodes;
  s.h = (hi.x() - lo.x()) / (nodes - 1);
  // keep the spacing square; ny covers the requested extent
  s.ny = static_cast<int>(std::lround((hi.y() - lo.y()) / s.h)) + 1;
  if (s.ny < 3) s.ny = 3;
  return s;
}

void GridSpec::nearest(const Eigen::Vector2d& p, int& i, int& j) const {
  i = std::clamp(static_cast<int>(std::lround((p.x() - origin.x()) / h)), 0, nx - 1);
  j = std::clamp(static_cast<int>(std::lround((p.y() - origin.y()) / h)), 0, ny - 1);
}

GridFunction::GridFunction(GridSpec spec, std::vector<double> values)
    : spec_(spec), v_(std::move(values)) {
  if (spec_.nx < 3 || spec_.ny < 3)
    throw GjeError(ErrorCode::InvalidDomainBox, "grid function needs dims >= 3");
  if (static_cast<int>(v_.size()) != spec_.size())
    throw GjeError(ErrorCode::InvalidDomainBox, "value array does not match grid dims");
}

GridFunction GridFunction::constant(const GridSpec& spec, double value) {
  return GridFunction(spec, std::vector<double>(spec.size(), value));
}

GridFunction GridFunction::sample(const GridSpec& spec,
                                  const std::function<double(const Eigen::Vector2d&)>& f) {
  std::vector<double> v(spec.size());
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) v[spec.index(i, j)] = f(spec.node(i, j));
  return GridFunction(spec, std::move(v));
}

bool GridFunction::covers(const Eigen::Vector2d& p) const {
  double sx = (p.x() - spec_.origin.x()) / spec_.h;
  double sy = (p.y() - spec_.origin.y()) / spec_.h;
  return sx >= -1e-12 && sy >= -1e-12 && sx <= spec_.nx - 1 + 1e-12 && sy <= spec_.ny - 1 + 1e-12;
}

double GridFunction::interp(const Eigen::Vector2d& p) const {
  double sx = (p.x() - spec_.origin.x()) / spec_.h;
  double sy = (p.y() - spec_.origin.y()) / spec_.h;
  if (sx < -1e-12 || sy < -1e-12 || sx > spec_.nx - 1 + 1e-12 || sy > spec_.ny - 1 + 1e-12)
    throw GjeError(ErrorCode::InterpolationOutOfRange, "point outside grid");
  int i = std::clamp(static_cast<int>(std::floor(sx)), 0, spec_.nx - 2);
  int j = std::clamp(static_cast<int>(std::floor(sy)), 0, spec_.ny - 2);
  double fx = sx - i, fy = sy - j;
  return (1 - fx) * (1 - fy) * at(i, j) + fx * (1 - fy) * at(i + 1, j) +
         (1 - fx) * fy * at(i, j + 1) + fx * fy * at(i + 1, j + 1);
}

Eigen::Vector2d GridFunction::gradient_node(int i, int j) const {
  double gx, gy;
  const double h = spec_.h;
  if (i == 0)
    gx = (-3 * at(0, j) + 4 * at(1, j) - at(2, j)) / (2 * h);
  else if (i == spec_.nx - 1)
    gx = (3 * at(i, j) - 4 * at(i - 1, j) + at(i - 2, j)) / (2 * h);
  else
    gx = (at(i + 1, j) - at(i - 1, j)) / (2 * h);
  if (j == 0)
    gy = (-3 * at(i, 0) + 4 * at(i, 1) - at(i, 2)) / (2 * h);
  else if (j == spec_.ny - 1)
    gy = (3 * at(i, j) - 4 * at(i, j - 1) + at(i, j - 2)) / (2 * h);
  else
    gy = (at(i, j + 1) - at(i, j - 1)) / (2 * h);
  return {gx, gy};
}

Eigen::Vector2d GridFunction::gradient(const Eigen::Vector2d& p) const {
  double sx = (p.x() - spec_.origin.x()) / spec_.h;
  double sy = (p.y() - spec_.origin.y()) / spec_.h;
  if (sx < -1e-12 || sy < -1e-12 || sx > spec_.nx - 1 + 1e-12 || sy > spec_.ny - 1 + 1e-12)
    throw GjeError(ErrorCode::InterpolationOutOfRange, "point outside grid");
  int i = std::clamp(static_cast<int>(std::floor(sx)), 0, spec_.nx - 2);
  int j = std::clamp(static_cast<int>(std::floor(sy)), 0, spec_.ny - 2);
  double fx = sx - i, fy = sy - j;
  Eigen::Vector2d g00 = gradient_node(i, j), g10 = gradient_node(i + 1, j);
  Eigen::Vector2d g01 = gradient_node(i, j + 1), g11 = gradient_node(i + 1, j + 1);
  return (1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10 + (1 - fx) * fy * g01 + fx * fy * g11;
}

Eigen::Matrix2d GridFunction::hessian_node(int i, int j) const {
  if (i < 1 || j < 1 || i > spec_.nx - 2 || j > spec_.ny - 2)
    throw GjeError(ErrorCode::InterpolationOutOfRange, "Hessian stencil leaves the grid");
  const double h2 = spec_.h * spec_.h;
  Eigen::Matrix2d H;
  H(0, 0) = (at(i + 1, j) - 2 * at(i, j) + at(i - 1, j)) / h2;
  H(1, 1) = (at(i, j + 1) - 2 * at(i, j) + at(i, j - 1)) / h2;
  H(0, 1) = H(1, 0) =
      (at(i + 1, j + 1) + at(i - 1, j - 1) - at(i + 1, j - 1) - at(i - 1, j + 1)) / (4 * h2);
  return H;
}

double GridFunction::min_value() const { return *std::min_element(v_.begin(), v_.end()); }
double GridFunction::max_value() const { return *std::max_element(v_.begin(), v_.end()); }

double gconvexity_certificate_defect(const GridFunction& u, const GenFunBase& gf,
                                     const std::vector<Eigen::Vector2d>& base_points) {
  double worst = 0.0;
  const GridSpec& s = u.spec();
  for (const Eigen::Vector2d& x0 : base_points) {
    double u0 = u.interp(x0);
    Eigen::Vector2d p0 = u.gradient(x0);
    YZSolution yz;
    try {
      yz = solve_yz(gf, x0, u0, p0);
    } catch (const GjeError& e) {
      throw GjeError(ErrorCode::SupportSolveFailed, e.what());
    }
    for (int j = 0; j < s.ny; ++j)
      for (int i = 0; i < s.nx; ++i) {
        Eigen::Vector2d xn = s.node(i, j);
        double support = gf.eval(xn, yz.y, yz.z);
        worst = std::min(worst, u.at(i, j) - support);
      }
  }
  return worst;
}

}  // namespace gjelab
