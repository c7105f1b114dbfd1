#include "gjelab/genfun.hpp"

#include <algorithm>
#include <cmath>

namespace gjelab {

namespace {
inline int tri_index(int i, int j, int n) {
  // upper-triangle (i <= j) flattening
  if (i > j) std::swap(i, j);
  return i * n - i * (i - 1) / 2 + (j - i);
}
}  // namespace

double GenFunBase::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const {
  return derivs(x, y, z, 1).g;
}

double GenFun::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const {
  return g_.eval(pt(x, y, z));
}

double TildeGenFun::eval(const Eigen::VectorXd& x_tilde, const Eigen::VectorXd& y,
                         double z) const {
  return base_.eval(from_tilde(x_tilde), y, z);
}

// ---------------------------------------------------------------------------
// GenFun

GenFun::GenFun(Expr g, DomainBox box, bool run_a2_check, uint64_t a2_seed, int a2_samples)
    : g_(std::move(g)), box_(std::move(box)) {
  box_.validate();
  const int n = box_.n;
  if (g_.max_var_index(VarKind::X) >= n || g_.max_var_index(VarKind::Y) >= n)
    throw GjeError(ErrorCode::DimensionMismatch, "expression uses components beyond dimension");

  auto vx = [](int i) { return Var{VarKind::X, i}; };
  auto vy = [](int j) { return Var{VarKind::Y, j}; };
  const Var vz{VarKind::Z, 0};

  dz_ = g_.deriv(vz);
  dx_.reserve(n);
  dy_.reserve(n);
  dxz_.reserve(n);
  for (int i = 0; i < n; ++i) {
    dx_.push_back(g_.deriv(vx(i)));
    dy_.push_back(g_.deriv(vy(i)));
    dxz_.push_back(dx_[i].deriv(vz));
  }
  dxx_.resize(tri_index(n - 1, n - 1, n) + 1);
  dxxz_.resize(dxx_.size());
  dxxy_.assign(n, std::vector<Expr>(dxx_.size()));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      Expr dij = dx_[i].deriv(vx(j));
      int t = tri_index(i, j, n);
      dxx_[t] = dij;
      dxxz_[t] = dij.deriv(vz);
      for (int r = 0; r < n; ++r) dxxy_[r][t] = dij.deriv(vy(r));
    }
  dxy_.resize(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dxy_[i * n + j] = dx_[i].deriv(vy(j));

  a_constant_ = std::all_of(dxx_.begin(), dxx_.end(), [](const Expr& e) { return e.is_constant(); });
  z_affine_ = dz_.is_constant(z_slope_);
  bool xz_zero = true;
  for (const Expr& e : dxz_) {
    double c;
    xz_zero = xz_zero && e.is_constant(c) && c == 0.0;
  }
  bool xy_const = std::all_of(dxy_.begin(), dxy_.end(), [](const Expr& e) { return e.is_constant(); });
  e_constant_ = xz_zero && xy_const;

  if (run_a2_check) check_a2(a2_seed, a2_samples);
}

GenFun GenFun::parse(std::string_view src, DomainBox box) {
  return GenFun(parse_expression(src, box.n), std::move(box));
}

EvalPoint GenFun::pt(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z) const {
  return EvalPoint{std::span<const double>(x.data(), x.size()),
                   std::span<const double>(y.data(), y.size()), z};
}

GenDerivs GenFun::derivs(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double z,
                         int order) const {
  const int n = box_.n;
  EvalPoint ep = pt(x, y, z);
  GenDerivs d;
  d.order = order;
  d.g = g_.eval(ep);
  d.gz = dz_.eval(ep);
  d.gx.resize(n);
  d.gy.resize(n);
  for (int i = 0; i < n; ++i) {
    d.gx[i] = dx_[i].eval(ep);
    d.gy[i] = dy_[i].eval(ep);
  }
  if (order < 2) return d;
  d.gxx.resize(n, n);
  d.gxy.resize(n, n);
  d.gxz.resize(n);
  for (int i = 0; i < n; ++i) {
    d.gxz[i] = dxz_[i].eval(ep);
    for (int j = 0; j < n; ++j) d.gxy(i, j) = dxy_[i * n + j].eval(ep);
    for (int j = i; j < n; ++j) {
      double v = dxx_[tri_index(i, j, n)].eval(ep);
      d.gxx(i, j) = v;
      d.gxx(j, i) = v;
    }
  }
  if (order < 3) return d;
  d.gxxz.resize(n, n);
  d.gxxy.assign(n, Eigen::MatrixXd(n, n));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      int t = tri_index(i, j, n);
      double vz = dxxz_[t].eval(ep);
      d.gxxz(i, j) = vz;
      d.gxxz(j, i) = vz;
      for (int r = 0; r < n; ++r) {
        double vr = dxxy_[r][t].eval(ep);
        d.gxxy[r](i, j) = vr;
        d.gxxy[r](j, i) = vr;
      }
    }
  return d;
}

bool GenFun::x_in_domain(const Eigen::VectorXd& x, double tol) const {
  return box_.contains_x(std::span<const double>(x.data(), x.size()), tol);
}

const Expr& GenFun::derivative_tree(std::vector<Var> multi) const {
  if (multi.size() > 4)
    throw GjeError(ErrorCode::OrderTooHigh, "derivative order exceeds 4");
  std::sort(multi.begin(), multi.end());
  std::lock_guard<std::mutex> lock(cache_mu_);
  auto it = tree_cache_.find(multi);
  if (it != tree_cache_.end()) return it->second;
  Expr e = g_.deriv(std::span<const Var>(multi.data(), multi.size()));
  auto [ins, ok] = tree_cache_.emplace(std::move(multi), std::move(e));
  (void)ok;
  return ins->second;
}

double GenFun::eval_derivative(std::vector<Var> multi, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y, double z) const {
  return derivative_tree(std::move(multi)).eval(pt(x, y, z));
}

void GenFun::check_a2(uint64_t seed, int samples) const {
  std::mt19937_64 rng(seed);
  const int n = box_.n;
  int accepted = 0, attempts = 0;
  while (accepted < samples && attempts < samples * 50) {
    ++attempts;
    auto xs = box_.sample_x(rng);
    auto ys = box_.sample_y(rng);
    double z = box_.sample_z(rng);
    if (box_.excluded_by_diagonal(xs, ys)) continue;
    ++accepted;
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(xs.data(), n);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    GenDerivs d = derivs(x, y, z, 2);
    if (!(d.gz < 0.0))
      throw GjeError(ErrorCode::A2Violation, "g_z >= 0 at a sampled point of Gamma");
    Eigen::MatrixXd e = d.gxy - (d.gxz / d.gz) * d.gy.transpose();
    if (std::abs(e.determinant()) < 1e-10)
      throw GjeError(ErrorCode::A2Violation, "det E vanishes at a sampled point of Gamma");
  }
  if (accepted < samples)
    throw GjeError(ErrorCode::A2Violation,
                   "domain box leaves no room outside the diagonal exclusion");
}

// ---------------------------------------------------------------------------
// solve_yz

YZSolution solve_yz(const GenFunBase& gf, const Eigen::VectorXd& x, double u,
                    const Eigen::VectorXd& p, const Eigen::VectorXd* y_seed,
                    const double* z_seed, double tol, int max_iter) {
  const int n = gf.dim();
  const DomainBox& box = gf.box();
  Eigen::VectorXd y(n);
  if (y_seed) {
    y = *y_seed;
  } else {
    for (int i = 0; i < n; ++i) y[i] = box.v_box[i].mid();
  }
  double z = z_seed ? *z_seed : box.z_interval.mid();

  auto inside_inflated = [&](const Eigen::VectorXd& yy, double zz) {
    for (int i = 0; i < n; ++i) {
      double pad = 0.10 * box.v_box[i].length();
      if (yy[i] < box.v_box[i].lo - pad || yy[i] > box.v_box[i].hi + pad) return false;
    }
    double zpad = 0.10 * box.z_interval.length();
    return zz >= box.z_interval.lo - zpad && zz <= box.z_interval.hi + zpad;
  };

  auto residual_of = [&](const GenDerivs& d) {
    return std::abs(d.g - u) + (d.gx - p).lpNorm<Eigen::Infinity>();
  };

  GenDerivs d = gf.derivs(x, y, z, 2);
  double res = residual_of(d);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (res <= tol) {
      std::span<const double> ys(y.data(), static_cast<size_t>(n));
      double edge_tol = 1e-9;
      bool in_y = box.contains_y(ys, edge_tol * 1e3);
      bool in_z = box.contains_z(z, edge_tol * 1e3 * box.z_interval.length());
      if (!in_y || !in_z)
        throw GjeError(ErrorCode::LeftDomain, "converged (y,z) lies outside V x I");
      return YZSolution{y, z, iter, res};
    }
    Eigen::MatrixXd J(n + 1, n + 1);
    Eigen::VectorXd F(n + 1);
    F[0] = d.g - u;
    J(0, Eigen::seq(0, n - 1)) = d.gy.transpose();
    J(0, n) = d.gz;
    for (int i = 0; i < n; ++i) {
      F[i + 1] = d.gx[i] - p[i];
      J(i + 1, Eigen::seq(0, n - 1)) = d.gxy.row(i);
      J(i + 1, n) = d.gxz[i];
    }
    Eigen::VectorXd step = J.fullPivLu().solve(-F);
    if (!step.allFinite())
      throw GjeError(ErrorCode::NoConvergence, "singular Newton system for (Y,Z)");

    double t = 1.0;
    bool accepted = false;
    for (int back = 0; back < 40; ++back) {
      Eigen::VectorXd y_try = y + t * step.head(n);
      double z_try = z + t * step[n];
      if (!inside_inflated(y_try, z_try)) {
        if (t == 1.0 && back == 0) {
          // full step leaves the (inflated) box; try shorter steps first
          t *= 0.5;
          continue;
        }
        t *= 0.5;
        continue;
      }
      GenDerivs d_try = gf.derivs(x, y_try, z_try, 2);
      double res_try = residual_of(d_try);
      if (res_try < res * (1.0 - 1e-4 * t) || res_try <= tol) {
        y = y_try;
        z = z_try;
        d = d_try;
        res = res_try;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!inside_inflated(y + step.head(n) * 1e-6, z + step[n] * 1e-6))
        throw GjeError(ErrorCode::LeftDomain, "Newton iterate exits Gamma");
      throw GjeError(ErrorCode::NoConvergence,
                     "line search stalled at residual " + std::to_string(res));
    }
  }
  if (res <= tol) {
    return YZSolution{y, z, max_iter, res};
  }
  throw GjeError(ErrorCode::NoConvergence,
                 "no convergence after " + std::to_string(max_iter) +
                     " iterations, residual " + std::to_string(res));
}

// ---------------------------------------------------------------------------
// coefficients

namespace {

struct CoreCoefs {
  Eigen::MatrixXd e;
  double det_e;
  Eigen::MatrixXd a;
  Eigen::MatrixXd e_inv;
};

CoreCoefs core_from_derivs(const GenDerivs& d) {
  CoreCoefs c;
  c.e = d.gxy - (d.gxz / d.gz) * d.gy.transpose();
  c.det_e = c.e.determinant();
  if (std::abs(c.det_e) < 1e-10)
    throw GjeError(ErrorCode::SingularE, "det E below 1e-10 at phase point");
  c.a = 0.5 * (d.gxx + d.gxx.transpose());
  c.e_inv = c.e.inverse();
  return c;
}

std::vector<Eigen::MatrixXd> dp_a_from_derivs(const GenDerivs& d, const Eigen::MatrixXd& e_inv) {
  const int n = d.gx.size();
  // D_{p_k} A_{ij} = (E^{-1})_{rk} [ g_{ij,r} - g_{,r} g_{ij,z} / g_z ]
  std::vector<Eigen::MatrixXd> dp(n);
  for (int k = 0; k < n; ++k) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < n; ++r)
      acc += e_inv(r, k) * (d.gxxy[r] - (d.gy[r] / d.gz) * d.gxxz);
    dp[k] = acc;
  }
  return dp;
}

}  // namespace

MateCoefficients coefficients(const GenFunBase& gf, const PhasePoint& q,
                              const CoefficientOptions& opts) {
  const int n = gf.dim();
  YZSolution yz = solve_yz(gf, q.x, q.u, q.p, opts.y_seed, opts.z_seed);
  GenDerivs d = gf.derivs(q.x, yz.y, yz.z, 3);

  MateCoefficients mc;
  mc.y = yz.y;
  mc.z = yz.z;
  CoreCoefs core = core_from_derivs(d);
  mc.e = core.e;
  mc.det_e = core.det_e;
  mc.a = core.a;

  // dA/du: Y_u = -E^{-1} g_{xz} / g_z,  Z_u = (1 - g_y . Y_u) / g_z
  Eigen::VectorXd y_u = -(core.e_inv * d.gxz) / d.gz;
  double z_u = (1.0 - d.gy.dot(y_u)) / d.gz;
  mc.du_a = z_u * d.gxxz;
  for (int r = 0; r < n; ++r) mc.du_a += y_u[r] * d.gxxy[r];

  if (opts.with_dp_a || opts.with_dpp_a) mc.dp_a = dp_a_from_derivs(d, core.e_inv);

  if (opts.with_dpp_a) {
    const double h = opts.dpp_step;
    mc.dpp_a.assign(n, std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Zero(n, n)));
    std::vector<std::vector<Eigen::MatrixXd>> shifted(n);  // [l] -> dp_a at p +- h e_l combined
    for (int l = 0; l < n; ++l) {
      Eigen::VectorXd pp = q.p, pm = q.p;
      pp[l] += h;
      pm[l] -= h;
      double z_sd = yz.z;
      YZSolution sp = solve_yz(gf, q.x, q.u, pp, &yz.y, &z_sd);
      YZSolution sm = solve_yz(gf, q.x, q.u, pm, &yz.y, &z_sd);
      GenDerivs dp_hi = gf.derivs(q.x, sp.y, sp.z, 3);
      GenDerivs dp_lo = gf.derivs(q.x, sm.y, sm.z, 3);
      CoreCoefs chi = core_from_derivs(dp_hi);
      CoreCoefs clo = core_from_derivs(dp_lo);
      auto dpa_hi = dp_a_from_derivs(dp_hi, chi.e_inv);
      auto dpa_lo = dp_a_from_derivs(dp_lo, clo.e_inv);
      shifted[l].resize(n);
      for (int k = 0; k < n; ++k) shifted[l][k] = (dpa_hi[k] - dpa_lo[k]) / (2.0 * h);
    }
    // shifted[l][k] approximates D_{p_l} D_{p_k} A; symmetrize in (k,l)
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l) mc.dpp_a[k][l] = 0.5 * (shifted[l][k] + shifted[k][l]);
    mc.has_dpp = true;
  }
  return mc;
}

// ---------------------------------------------------------------------------
// condition checks

namespace {

void random_orthonormal_pair(std::mt19937_64& rng, int n, Eigen::VectorXd& xi,
                             Eigen::VectorXd& eta) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int tries = 0; tries < 100; ++tries) {
    xi.resize(n);
    eta.resize(n);
    for (int i = 0; i < n; ++i) xi[i] = gauss(rng);
    double nx = xi.norm();
    if (nx < 1e-8) continue;
    xi /= nx;
    for (int i = 0; i < n; ++i) eta[i] = gauss(rng);
    eta -= eta.dot(xi) * xi;
    double ne = eta.norm();
    if (ne < 1e-8) continue;
    eta /= ne;
    return;
  }
  throw GjeError(ErrorCode::NoConvergence, "failed to draw an orthonormal pair");
}

PhasePoint sample_phase_point(const GenFun& gf, std::mt19937_64& rng, Eigen::VectorXd& y_out,
                              double& z_out) {
  const DomainBox& box = gf.box();
  const int n = box.n;
  for (int tries = 0; tries < 1000; ++tries) {
    auto xs = box.sample_x(rng, 0.02);
    auto ys = box.sample_y(rng, 0.02);
    double z = box.sample_z(rng, 0.02);
    if (box.excluded_by_diagonal(xs, ys)) continue;
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(xs.data(), n);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    GenDerivs d = gf.derivs(x, y, z, 1);
    y_out = y;
    z_out = z;
    return PhasePoint{x, d.g, d.gx};
  }
  throw GjeError(ErrorCode::NoConvergence, "phase-point sampling kept hitting the diagonal");
}

}  // namespace

A3Report check_a3(const GenFun& gf, int samples, uint64_t seed, int pairs_per_sample, double tol) {
  std::mt19937_64 rng(seed);
  const int n = gf.dim();
  A3Report rep;
  rep.samples = samples;
  rep.pairs_per_sample = pairs_per_sample;
  rep.tol = tol;
  bool first = true;
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd y_seed;
    double z_seed;
    PhasePoint q = sample_phase_point(gf, rng, y_seed, z_seed);
    CoefficientOptions opts;
    opts.with_dpp_a = true;
    opts.y_seed = &y_seed;
    opts.z_seed = &z_seed;
    MateCoefficients mc = coefficients(gf, q, opts);
    for (int pair = 0; pair < pairs_per_sample; ++pair) {
      Eigen::VectorXd xi, eta;
      random_orthonormal_pair(rng, n, xi, eta);
      double c = 0.0;
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) c += eta[k] * eta[l] * xi.dot(mc.dpp_a[k][l] * xi);
      if (first || c < rep.c_min) {
        rep.c_min = c;
        rep.argmin = q;
        rep.xi = xi;
        rep.eta = eta;
        first = false;
      }
    }
  }
  if (rep.c_min > tol)
    rep.verdict = 1;
  else if (std::abs(rep.c_min) <= tol)
    rep.verdict = 0;
  else
    rep.verdict = -1;
  return rep;
}

A1StarReport check_a1star(const GenFun& gf, int yz_samples, int x_grid, uint64_t seed,
                          double collision_tol) {
  std::mt19937_64 rng(seed);
  const DomainBox& box = gf.box();
  const int n = box.n;
  A1StarReport rep;
  rep.samples = yz_samples;

  // x lattice over U (shrunk a little to stay interior)
  std::vector<Eigen::VectorXd> lattice;
  std::vector<int> idx(n, 0);
  for (;;) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) {
      const Interval& iv = box.u_box[i];
      double t = (idx[i] + 0.5) / x_grid;
      x[i] = iv.lo + t * iv.length();
    }
    lattice.push_back(x);
    int c = 0;
    while (c < n && ++idx[c] == x_grid) idx[c++] = 0;
    if (c == n) break;
  }

  for (int s = 0; s < yz_samples; ++s) {
    auto ys = box.sample_y(rng, 0.02);
    double z = box.sample_z(rng, 0.02);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    std::vector<Eigen::VectorXd> images;
    std::vector<int> kept;
    images.reserve(lattice.size());
    for (size_t i = 0; i < lattice.size(); ++i) {
      std::span<const double> xs(lattice[i].data(), static_cast<size_t>(n));
      std::span<const double> ysp(y.data(), static_cast<size_t>(n));
      if (box.excluded_by_diagonal(xs, ysp)) continue;
      GenDerivs d = gf.derivs(lattice[i], y, z, 1);
      images.push_back(d.gy / d.gz);
      kept.push_back(static_cast<int>(i));
    }
    for (size_t i = 0; i < images.size(); ++i)
      for (size_t j = i + 1; j < images.size(); ++j) {
        if ((images[i] - images[j]).lpNorm<Eigen::Infinity>() <= collision_tol) {
          rep.injective = false;
          rep.witness_x1 = lattice[kept[i]];
          rep.witness_x2 = lattice[kept[j]];
          rep.witness_y = y;
          rep.witness_z = z;
          return rep;
        }
      }
  }
  return rep;
}

double orthogonal_vanishing_defect(const GenFunBase& gf, const Eigen::VectorXd& y0, double zh,
                                   const std::vector<Eigen::VectorXd>& x_samples, int pairs,
                                   uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = gf.dim();
  double worst = 0.0;
  for (const Eigen::VectorXd& x : x_samples) {
    GenDerivs d = gf.derivs(x, y0, zh, 1);
    PhasePoint q{x, d.g, d.gx};
    CoefficientOptions opts;
    opts.y_seed = &y0;
    opts.z_seed = &zh;
    MateCoefficients mc = coefficients(gf, q, opts);
    for (int pair = 0; pair < pairs; ++pair) {
      Eigen::VectorXd xi, eta;
      random_orthonormal_pair(rng, n, xi, eta);
      double c = 0.0;
      for (int k = 0; k < n; ++k) c += eta[k] * xi.dot(mc.dp_a[k] * xi);
      worst = std::max(worst, std::abs(c));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// tilde coordinates

namespace {

Eigen::VectorXd forward_tilde(const GenFunBase& gf, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y0, double zh, Eigen::MatrixXd* jac) {
  GenDerivs d = gf.derivs(x, y0, zh, jac ? 2 : 1);
  if (jac) {
    const int n = gf.dim();
    jac->resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        (*jac)(i, k) = (d.gxy(k, i) * d.gz - d.gy[i] * d.gxz[k]) / (d.gz * d.gz);
  }
  return d.gy / d.gz;
}

}  // namespace

Eigen::VectorXd to_tilde_point(const GenFunBase& gf, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y0, double zh) {
  return forward_tilde(gf, x, y0, zh, nullptr);
}

Eigen::VectorXd from_tilde_point(const GenFunBase& gf, const Eigen::VectorXd& x_tilde,
                                 const Eigen::VectorXd& y0, double zh,
                                 const Eigen::VectorXd* x_seed, double tol, int max_iter) {
  const int n = gf.dim();
  const DomainBox& box = gf.box();
  Eigen::VectorXd x(n);
  if (x_seed) {
    x = *x_seed;
  } else {
    for (int i = 0; i < n; ++i) x[i] = box.u_box[i].mid();
  }
  Eigen::MatrixXd J;
  Eigen::VectorXd m = forward_tilde(gf, x, y0, zh, &J);
  double res = (m - x_tilde).lpNorm<Eigen::Infinity>();
  for (int iter = 0; iter < max_iter; ++iter) {
    if (res <= tol) return x;
    Eigen::VectorXd step = J.fullPivLu().solve(x_tilde - m);
    if (!step.allFinite())
      throw GjeError(ErrorCode::InverseNoConvergence, "singular Jacobian inverting tilde map");
    double t = 1.0;
    bool ok = false;
    for (int back = 0; back < 40; ++back) {
      Eigen::VectorXd x_try = x + t * step;
      bool inside = true;
      for (int i = 0; i < n; ++i) {
        double pad = 0.25 * box.u_box[i].length();
        if (x_try[i] < box.u_box[i].lo - pad || x_try[i] > box.u_box[i].hi + pad) inside = false;
      }
      if (inside) {
        Eigen::VectorXd m_try = forward_tilde(gf, x_try, y0, zh, &J);
        double res_try = (m_try - x_tilde).lpNorm<Eigen::Infinity>();
        if (res_try < res || res_try <= tol) {
          x = x_try;
          m = m_try;
          res = res_try;
          ok = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!ok)
      throw GjeError(ErrorCode::InverseNoConvergence,
                     "tilde inversion stalled at residual " + std::to_string(res));
  }
  if (res <= tol) return x;
  throw GjeError(ErrorCode::InverseNoConvergence,
                 "tilde inversion did not reach tolerance, residual " + std::to_string(res));
}

TildeGenFun::TildeGenFun(const GenFun& base, Eigen::VectorXd y0, double zh)
    : base_(base), y0_(std::move(y0)), zh_(zh) {
  const int n = base_.dim();
  x_center_.resize(n);
  for (int i = 0; i < n; ++i) x_center_[i] = base_.box().u_box[i].mid();
}

Eigen::VectorXd TildeGenFun::to_tilde(const Eigen::VectorXd& x_raw) const {
  return to_tilde_point(base_, x_raw, y0_, zh_);
}

Eigen::VectorXd TildeGenFun::from_tilde(const Eigen::VectorXd& x_tilde,
                                        const Eigen::VectorXd* x_seed) const {
  return from_tilde_point(base_, x_tilde, y0_, zh_, x_seed ? x_seed : &x_center_);
}

bool TildeGenFun::x_in_domain(const Eigen::VectorXd& x_tilde, double tol) const {
  try {
    Eigen::VectorXd x = from_tilde(x_tilde);
    return base_.x_in_domain(x, tol);
  } catch (const GjeError&) {
    return false;
  }
}

GenDerivs TildeGenFun::derivs(const Eigen::VectorXd& x_tilde, const Eigen::VectorXd& y, double z,
                              int order) const {
  const int n = base_.dim();
  Eigen::VectorXd x = from_tilde(x_tilde);

  // Transform jets at the anchor (y0, zh): forward map phi_i = g_{,i}/g_z.
  GenDerivs td = base_.derivs(x, y0_, zh_, 3);
  Eigen::MatrixXd J(n, n);         // J(i,k) = d phi_i / d x_k
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      J(i, k) = (td.gxy(k, i) * td.gz - td.gy[i] * td.gxz[k]) / (td.gz * td.gz);
  Eigen::MatrixXd Jinv = J.inverse();

  // d2phi[i](k,l) = d^2 phi_i / dx_k dx_l
  std::vector<Eigen::MatrixXd> d2phi(n, Eigen::MatrixXd(n, n));
  double gz2 = td.gz * td.gz;
  double gz3 = gz2 * td.gz;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      double Nki = td.gxy(k, i) * td.gz - td.gy[i] * td.gxz[k];
      for (int l = 0; l < n; ++l) {
        double dN = td.gxxy[i](k, l) * td.gz + td.gxy(k, i) * td.gxz[l] -
                    td.gxy(l, i) * td.gxz[k] - td.gy[i] * td.gxxz(k, l);
        d2phi[i](k, l) = dN / gz2 - 2.0 * Nki * td.gxz[l] / gz3;
      }
    }
  }

  // Inverse-map jets: X_{a,i} = Jinv(a,i);
  // X_{a,ij} = -sum_{b,c,d} Jinv(a,c) d2phi[c](d,b) Jinv(d,i) Jinv(b,j)
  std::vector<Eigen::MatrixXd> X2(n, Eigen::MatrixXd::Zero(n, n));
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c)
            for (int dd = 0; dd < n; ++dd)
              acc += Jinv(a, c) * d2phi[c](dd, b) * Jinv(dd, i) * Jinv(b, j);
        X2[a](i, j) = -acc;
      }

  GenDerivs fd = base_.derivs(x, y, z, std::max(order, 1));
  GenDerivs out;
  out.order = order;
  out.g = fd.g;
  out.gz = fd.gz;
  out.gy = fd.gy;
  out.gx.resize(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int a = 0; a < n; ++a) acc += fd.gx[a] * Jinv(a, i);
    out.gx[i] = acc;
  }
  if (order < 2) return out;

  out.gxy.resize(n, n);
  out.gxz.resize(n);
  out.gxx.resize(n, n);
  for (int i = 0; i < n; ++i) {
    double accz = 0.0;
    for (int a = 0; a < n; ++a) accz += fd.gxz[a] * Jinv(a, i);
    out.gxz[i] = accz;
    for (int j = 0; j < n; ++j) {
      double accy = 0.0;
      for (int a = 0; a < n; ++a) accy += fd.gxy(a, j) * Jinv(a, i);
      out.gxy(i, j) = accy;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int a = 0; a < n; ++a) {
        acc += fd.gx[a] * X2[a](i, j);
        for (int b = 0; b < n; ++b) acc += fd.gxx(a, b) * Jinv(a, i) * Jinv(b, j);
      }
      out.gxx(i, j) = acc;
    }
  if (order < 3) return out;

  out.gxxz.resize(n, n);
  out.gxxy.assign(n, Eigen::MatrixXd(n, n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double accz = 0.0;
      for (int a = 0; a < n; ++a) {
        accz += fd.gxz[a] * X2[a](i, j);
        for (int b = 0; b < n; ++b) accz += fd.gxxz(a, b) * Jinv(a, i) * Jinv(b, j);
      }
      out.gxxz(i, j) = accz;
      for (int r = 0; r < n; ++r) {
        double accr = 0.0;
        for (int a = 0; a < n; ++a) {
          accr += fd.gxy(a, r) * X2[a](i, j);
          for (int b = 0; b < n; ++b) accr += fd.gxxy[r](a, b) * Jinv(a, i) * Jinv(b, j);
        }
        out.gxxy[r](i, j) = accr;
      }
    }
  return out;
}

}  // namespace gjelab
