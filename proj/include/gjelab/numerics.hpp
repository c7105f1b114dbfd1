#pragma once

#include <Eigen/Dense>
#include <span>

namespace gjelab {

/// Eigen-decomposition of a symmetric 2x2 matrix, eigenvalues sorted
/// descending, eigenvectors orthonormal.
struct Eig2 {
  double l1{0.0}, l2{0.0};
  Eigen::Vector2d v1{1.0, 0.0}, v2{0.0, 1.0};
};
Eig2 eig2_sym(const Eigen::Matrix2d& w);

/// Clamped determinant det^+(W) = prod max(lambda_i, delta): the filtered
/// 2D operator that selects the admissible root.
double det_plus(const Eigen::Matrix2d& w, double delta);
/// d det^+ / dW (symmetric 2x2, zero on clamped eigendirections).
Eigen::Matrix2d det_plus_grad(const Eigen::Matrix2d& w, double delta);

struct LineFit {
  double slope{0.0};
  double intercept{0.0};
  double r2{0.0};
  int n{0};
};
LineFit fit_line(std::span<const double> xs, std::span<const double> ys);

/// FNV-1a 64-bit hash, used for content fingerprints in run manifests.
uint64_t fnv1a64(std::span<const char> bytes);

}  // namespace gjelab
