#include "gjelab/duality.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <thread>

#include "gjelab/numerics.hpp"

namespace gjelab {

double z_inverse(const GenFunBase& gf, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                 double u, double tol, const double* z_seed) {
  const Interval zi = gf.box().z_interval;

  // fast path: g affine in z
  if (const auto* sym = dynamic_cast<const GenFun*>(&gf)) {
    double slope;
    if (sym->affine_in_z(slope) && slope != 0.0) {
      double g0 = gf.eval(x, y, zi.mid());
      double z = zi.mid() + (u - g0) / slope;
      if (!zi.contains(z, 1e-9 * zi.length()))
        throw GjeError(ErrorCode::RangeError, "u outside g(x, y, I)");
      return z;
    }
  }

  GenDerivs d_lo = gf.derivs(x, y, zi.lo, 1);
  GenDerivs d_hi = gf.derivs(x, y, zi.hi, 1);
  double g_max = d_lo.g, g_min = d_hi.g;  // g decreasing in z
  if (u > g_max + tol || u < g_min - tol)
    throw GjeError(ErrorCode::RangeError, "u outside g(x, y, I)");
  double lo = zi.lo, hi = zi.hi;
  double z = z_seed ? std::clamp(*z_seed, lo, hi) : zi.mid();
  for (int iter = 0; iter < 200; ++iter) {
    GenDerivs d = gf.derivs(x, y, z, 1);
    double f = d.g - u;
    if (std::abs(f) <= tol) return z;
    if (f > 0)
      lo = z;  // g too large -> move z up
    else
      hi = z;
    double step = -f / d.gz;
    double z_new = z + step;
    if (!(z_new > lo && z_new < hi)) z_new = 0.5 * (lo + hi);
    z = z_new;
  }
  throw GjeError(ErrorCode::NoConvergence, "z-solve did not reach tolerance");
}

namespace {

/// Maximize `score` over the lattice [0,nx) x [0,ny): coarse scan with the
/// given stride, then steepest-ascent polish on the 8-neighborhood.
template <typename Score>
std::pair<int, double> lattice_max(int nx, int ny, int stride, Score&& score) {
  int best_id = -1;
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < ny; j += stride)
    for (int i = 0; i < nx; i += stride) {
      auto s = score(i, j);
      if (s && *s > best) {
        best = *s;
        best_id = j * nx + i;
      }
    }
  if (best_id < 0) return {-1, best};
  if (stride > 1) {
    int ci = best_id % nx, cj = best_id / nx;
    for (int moves = 0; moves < 4 * nx * ny; ++moves) {
      int ni = ci, nj = cj;
      double local = best;
      for (int b = -1; b <= 1; ++b)
        for (int a = -1; a <= 1; ++a) {
          int ii = ci + a, jj = cj + b;
          if (ii < 0 || jj < 0 || ii >= nx || jj >= ny || (a == 0 && b == 0)) continue;
          auto s = score(ii, jj);
          if (s && *s > local) {
            local = *s;
            ni = ii;
            nj = jj;
          }
        }
      if (ni == ci && nj == cj) break;
      ci = ni;
      cj = nj;
      best = local;
    }
    best_id = cj * nx + ci;
  }
  return {best_id, best};
}

void parallel_rows(int ny, int threads, const std::function<void(int)>& row_task) {
  if (threads <= 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, ny);
  if (threads <= 1) {
    for (int j = 0; j < ny; ++j) row_task(j);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        int j = next.fetch_add(1);
        if (j >= ny) return;
        row_task(j);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace

DualFunction g_star_transform(const GridFunction& u, const GenFunBase& gf,
                              const EnvelopeOptions& opts) {
  const GridSpec& us = u.spec();
  const DomainBox& box = gf.box();

  Eigen::Vector2d vlo(box.v_box[0].lo, box.v_box[1].lo);
  Eigen::Vector2d vhi(box.v_box[0].hi, box.v_box[1].hi);
  if ((opts.v_hi - opts.v_lo).norm() > 0) {
    vlo = opts.v_lo;
    vhi = opts.v_hi;
  }
  DualFunction dual;
  dual.grid.nx = dual.grid.ny = opts.dual_nodes;
  dual.grid.origin = vlo;
  dual.grid.h = (vhi.x() - vlo.x()) / (opts.dual_nodes - 1);
  dual.grid.ny = static_cast<int>(std::lround((vhi.y() - vlo.y()) / dual.grid.h)) + 1;
  dual.values.assign(dual.grid.size(), 0.0);
  dual.back_ptr.assign(dual.grid.size(), -1);
  dual.ok.assign(dual.grid.size(), 0);
  {
    const char* bytes = reinterpret_cast<const char*>(u.values().data());
    dual.source_hash = fnv1a64({bytes, u.values().size() * sizeof(double)});
  }

  int stride = opts.stride > 0 ? opts.stride : std::max(1, us.nx / 64);

  parallel_rows(dual.grid.ny, opts.threads, [&](int jy) {
    double z_warm = box.z_interval.mid();
    for (int iy = 0; iy < dual.grid.nx; ++iy) {
      Eigen::Vector2d ynode = dual.grid.node(iy, jy);
      Eigen::VectorXd y(2);
      y << ynode.x(), ynode.y();
      auto score = [&](int ix, int jx) -> std::optional<double> {
        Eigen::Vector2d xnode = us.node(ix, jx);
        Eigen::VectorXd x(2);
        x << xnode.x(), xnode.y();
        std::span<const double> xs(x.data(), 2), ys(y.data(), 2);
        if (gf.box().excluded_by_diagonal(xs, ys)) return std::nullopt;
        try {
          double z = z_inverse(gf, x, y, u.at(ix, jx), 1e-12, &z_warm);
          z_warm = z;
          return z;
        } catch (const GjeError&) {
          return std::nullopt;
        }
      };
      auto [id, best] = lattice_max(us.nx, us.ny, stride, score);
      int did = dual.grid.index(iy, jy);
      if (id >= 0) {
        dual.values[did] = best;
        dual.back_ptr[did] = id;
        dual.ok[did] = 1;
      }
    }
  });
  return dual;
}

DoubleTransformReport double_transform_check(const GridFunction& u, const GenFunBase& gf,
                                             const EnvelopeOptions& opts) {
  DualFunction v = g_star_transform(u, gf, opts);
  const GridSpec& us = u.spec();
  int stride = opts.stride > 0 ? opts.stride : std::max(1, v.grid.nx / 64);

  std::vector<double> hat(us.size(), 0.0);
  parallel_rows(us.ny, opts.threads, [&](int jx) {
    for (int ix = 0; ix < us.nx; ++ix) {
      Eigen::Vector2d xnode = us.node(ix, jx);
      Eigen::VectorXd x(2);
      x << xnode.x(), xnode.y();
      auto score = [&](int iy, int jy) -> std::optional<double> {
        int did = v.grid.index(iy, jy);
        if (!v.ok[did]) return std::nullopt;
        Eigen::Vector2d ynode = v.grid.node(iy, jy);
        Eigen::VectorXd y(2);
        y << ynode.x(), ynode.y();
        std::span<const double> xs(x.data(), 2), ys(y.data(), 2);
        if (gf.box().excluded_by_diagonal(xs, ys)) return std::nullopt;
        return gf.eval(x, y, v.values[did]);
      };
      auto [id, best] = lattice_max(v.grid.nx, v.grid.ny, stride, score);
      hat[us.index(ix, jx)] = (id >= 0) ? best : -std::numeric_limits<double>::infinity();
    }
  });

  DoubleTransformReport rep{GridFunction(us, std::move(hat)), 0.0, 0.0};
  for (int j = 0; j < us.ny; ++j)
    for (int i = 0; i < us.nx; ++i) {
      double diff = u.at(i, j) - rep.u_hat.at(i, j);
      rep.max_abs_defect = std::max(rep.max_abs_defect, std::abs(diff));
      rep.envelope_gap = std::max(rep.envelope_gap, diff);
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Taylor blocks after the affine renormalization

namespace {

/// Nested 4th-order central differences of a multivariate callable.
class TaylorProbe {
 public:
  TaylorProbe(std::function<double(const std::array<double, 5>&)> fn, double step)
      : fn_(std::move(fn)), step_(step) {}

  double derivative(const std::vector<int>& vars) const {
    std::array<double, 5> at{0, 0, 0, 0, 0};
    return walk(vars, 0, at);
  }

 private:
  double walk(const std::vector<int>& vars, size_t depth, std::array<double, 5>& at) const {
    if (depth == vars.size()) return fn_(at);
    int v = vars[depth];
    auto probe = [&](double offset) {
      at[v] += offset;
      double r = walk(vars, depth + 1, at);
      at[v] -= offset;
      return r;
    };
    return (-probe(2 * step_) + 8 * probe(step_) - 8 * probe(-step_) + probe(-2 * step_)) /
           (12 * step_);
  }

  std::function<double(const std::array<double, 5>&)> fn_;
  double step_;
};

}  // namespace

NormalFormReport gen_exp_normal_form(const GenFun& gf, const Eigen::VectorXd& x0,
                                     const Eigen::VectorXd& y0, double z0, double fd_step) {
  GenDerivs d0 = gf.derivs(x0, y0, z0, 2);
  Eigen::Matrix2d e0 = d0.gxy - (d0.gxz / d0.gz) * d0.gy.transpose();
  if (std::abs(e0.determinant()) < 1e-10)
    throw GjeError(ErrorCode::SingularE, "E degenerate at the expansion point");
  Eigen::Matrix2d e0_inv = e0.inverse();
  const double c0 = d0.g;
  const Eigen::VectorXd p0 = d0.gx;

  // vars: 0,1 = x-tilde; 2,3 = y-tilde; 4 = z-tilde
  auto composite = [&](const std::array<double, 5>& v) {
    Eigen::VectorXd y = y0 + e0_inv * Eigen::Vector2d(v[2], v[3]);
    double z = z_inverse(gf, x0, y, c0 - v[4], 1e-14);
    Eigen::VectorXd x = x0 + Eigen::Vector2d(v[0], v[1]);
    return gf.eval(x, y, z) - c0 - p0[0] * v[0] - p0[1] * v[1];
  };
  TaylorProbe probe(composite, fd_step);

  auto D = [&](std::initializer_list<int> vars) {
    return probe.derivative(std::vector<int>(vars));
  };

  NormalFormReport rep;
  rep.xyy.assign(2, Eigen::Matrix2d::Zero());
  rep.xxy.assign(2, Eigen::Matrix2d::Zero());
  rep.xxx.assign(2, Eigen::Matrix2d::Zero());
  rep.yyy.assign(2, Eigen::Matrix2d::Zero());

  rep.z_coef = D({4});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      rep.xy(i, j) = D({i, 2 + j});
      rep.xx(i, j) = 0.5 * D({i, j});
      rep.yy(i, j) = 0.5 * D({2 + i, 2 + j});
      rep.xxz(i, j) = 0.5 * D({i, j, 4});
      rep.xyz(i, j) = D({i, 2 + j, 4});
      rep.yyz(i, j) = 0.5 * D({2 + i, 2 + j, 4});
      for (int k = 0; k < 2; ++k) {
        rep.xyy[i](j, k) = 0.5 * D({i, 2 + j, 2 + k});
        rep.xxy[k](i, j) = 0.5 * D({i, j, 2 + k});
        rep.xxx[k](i, j) = D({i, j, k}) / 6.0;
        rep.yyy[k](i, j) = D({2 + i, 2 + j, 2 + k}) / 6.0;
      }
    }
  for (int i = 0; i < 2; ++i) {
    rep.xz[i] = D({i, 4});
    rep.yz[i] = D({2 + i, 4});
    rep.xzz[i] = 0.5 * D({i, 4, 4});
    rep.yzz[i] = 0.5 * D({2 + i, 4, 4});
  }
  rep.zz = 0.5 * D({4, 4});
  rep.zzz = D({4, 4, 4}) / 6.0;

  double res = 0.0;
  res = std::max(res, rep.xx.lpNorm<Eigen::Infinity>());
  res = std::max(res, rep.yy.lpNorm<Eigen::Infinity>());
  res = std::max(res, rep.xz.lpNorm<Eigen::Infinity>());
  res = std::max(res, rep.yz.lpNorm<Eigen::Infinity>());
  for (int k = 0; k < 2; ++k) {
    res = std::max(res, rep.xxy[k].lpNorm<Eigen::Infinity>());
    res = std::max(res, rep.xxx[k].lpNorm<Eigen::Infinity>());
    res = std::max(res, rep.yyy[k].lpNorm<Eigen::Infinity>());
  }
  rep.residual = res;
  return rep;
}

}  // namespace gjelab
