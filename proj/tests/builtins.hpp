#pragma once

// Shared test fixtures: the three built-in generating functions on domain
// boxes sized so that every evaluation in the suites stays inside Gamma.

#include <functional>
#include <memory>

#include "gjelab/genfun.hpp"

namespace gjelab::testing {

inline GenFun make_ma() {
  // g(x,y,z) = x.y - z
  DomainBox box = DomainBox::square(2, {-2.0, 2.0}, {-4.0, 4.0}, {-12.0, 12.0}, {-8.0, 8.0});
  return GenFun::parse("dot(x,y) - z", box);
}

inline GenFun make_quad_ot() {
  // g(x,y,z) = -|x-y|^2/2 - z
  DomainBox box = DomainBox::square(2, {-2.0, 2.0}, {-6.0, 6.0}, {-40.0, 40.0}, {-20.0, 20.0});
  return GenFun::parse("-0.5*norm2(x-y) - z", box);
}

inline GenFun make_reflector() {
  // log-type g(x,y,z) = log|x-y| - z with |x-y| in [0.566, 1.84] over U x V.
  // This orientation of the log cost has D_pp A xi xi eta eta = 2 on
  // orthonormal pairs (strict A3); the opposite sign gives exactly -2.
  DomainBox box = DomainBox::square(2, {-0.15, 0.15}, {0.55, 1.15}, {-1.5, 1.5}, {-0.5, 0.5}, 0.5);
  return GenFun::parse("log(norm(x-y)) - z", box);
}

/// g-convex function built as an envelope u(x) = max_y g(x, y, zfun(y)) over a
/// lattice of the V box: g-convex by construction, smooth wherever the argmax
/// is unique.
inline std::function<double(const Eigen::Vector2d&)> envelope_function(
    const GenFun& gf, const std::function<double(const Eigen::Vector2d&)>& zfun, int y_nodes) {
  const DomainBox& box = gf.box();
  auto ys = std::make_shared<std::vector<Eigen::VectorXd>>();
  auto zs = std::make_shared<std::vector<double>>();
  for (int j = 0; j < y_nodes; ++j)
    for (int i = 0; i < y_nodes; ++i) {
      Eigen::VectorXd y(2);
      y << box.v_box[0].lo + box.v_box[0].length() * i / (y_nodes - 1),
          box.v_box[1].lo + box.v_box[1].length() * j / (y_nodes - 1);
      ys->push_back(y);
      zs->push_back(zfun(Eigen::Vector2d(y[0], y[1])));
    }
  return [&gf, ys, zs](const Eigen::Vector2d& x) {
    double best = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < ys->size(); ++k)
      best = std::max(best, gf.eval(x, (*ys)[k], (*zs)[k]));
    return best;
  };
}

}  // namespace gjelab::testing
