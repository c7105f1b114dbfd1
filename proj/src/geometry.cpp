#include "gjelab/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>

#include "gjelab/numerics.hpp"

namespace gjelab {

// ---------------------------------------------------------------------------
// small numerics shared with the solver

Eig2 eig2_sym(const Eigen::Matrix2d& w) {
  Eig2 e;
  double a = w(0, 0), b = 0.5 * (w(0, 1) + w(1, 0)), c = w(1, 1);
  double tr2 = 0.5 * (a + c);
  double disc = std::sqrt(std::max(0.25 * (a - c) * (a - c) + b * b, 0.0));
  e.l1 = tr2 + disc;
  e.l2 = tr2 - disc;
  if (disc < 1e-300) {
    e.v1 = {1.0, 0.0};
    e.v2 = {0.0, 1.0};
    return e;
  }
  Eigen::Vector2d cand1(b, e.l1 - a), cand2(e.l1 - c, b);
  e.v1 = (cand1.norm() >= cand2.norm() ? cand1 : cand2).normalized();
  e.v2 = {-e.v1.y(), e.v1.x()};
  return e;
}

double det_plus(const Eigen::Matrix2d& w, double delta) {
  Eig2 e = eig2_sym(w);
  return std::max(e.l1, delta) * std::max(e.l2, delta);
}

Eigen::Matrix2d det_plus_grad(const Eigen::Matrix2d& w, double delta) {
  Eig2 e = eig2_sym(w);
  double d1 = (e.l1 > delta) ? std::max(e.l2, delta) : 0.0;
  double d2 = (e.l2 > delta) ? std::max(e.l1, delta) : 0.0;
  return d1 * e.v1 * e.v1.transpose() + d2 * e.v2 * e.v2.transpose();
}

LineFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  LineFit f;
  f.n = static_cast<int>(xs.size());
  if (f.n < 2) return f;
  double mx = 0, my = 0;
  for (int i = 0; i < f.n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= f.n;
  my /= f.n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < f.n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (syy > 0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

uint64_t fnv1a64(std::span<const char> bytes) {
  uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// polygon utilities

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double acc = 0.0;
  const size_t m = poly.size();
  for (size_t i = 0; i < m; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % m];
    acc += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * acc;
}

bool point_in_polygon(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& p) {
  bool inside = false;
  const size_t m = poly.size();
  for (size_t i = 0, j = m - 1; i < m; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      double t = (p.y() - a.y()) / (b.y() - a.y());
      if (p.x() < a.x() + t * (b.x() - a.x())) inside = !inside;
    }
  }
  return inside;
}

namespace {

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const auto& a, const auto& b) { return (a - b).norm() < 1e-14; }),
            pts.end());
  const size_t m = pts.size();
  if (m < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * m);
  size_t k = 0;
  for (size_t i = 0; i < m; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = m - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

double distance_to_polygon_boundary(const std::vector<Eigen::Vector2d>& poly,
                                    const Eigen::Vector2d& p) {
  double best = std::numeric_limits<double>::infinity();
  const size_t m = poly.size();
  for (size_t i = 0; i < m; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % m];
    Eigen::Vector2d ab = b - a;
    double t = std::clamp(ab.dot(p - a) / std::max(ab.squaredNorm(), 1e-300), 0.0, 1.0);
    best = std::min(best, (p - (a + t * ab)).norm());
  }
  return best;
}

}  // namespace

double polygon_convexity_defect(const std::vector<Eigen::Vector2d>& poly) {
  std::vector<Eigen::Vector2d> hull = convex_hull(poly);
  if (hull.size() < 3) return 0.0;
  // vertices strictly inside the hull witness non-convexity; their distance
  // to the hull boundary measures the dent
  double worst = 0.0;
  for (const auto& p : poly) worst = std::max(worst, distance_to_polygon_boundary(hull, p));
  return worst;
}

// ---------------------------------------------------------------------------
// marching squares

namespace {

// edge key: orientation bit + node (i,j) of the lower/left end
int64_t edge_key(bool horizontal, int i, int j, int nx) {
  return (horizontal ? 0ll : 1ll) * (1ll << 40) + static_cast<int64_t>(j) * nx + i;
}

struct MarchSegment {
  int64_t e0, e1;
};

}  // namespace

std::vector<Eigen::Vector2d> contour_polygon(const GridSpec& spec, const std::vector<double>& field,
                                             const std::vector<uint8_t>& component,
                                             const Eigen::Vector2d& inside_point) {
  const int nx = spec.nx, ny = spec.ny;
  auto value = [&](int i, int j) {
    double d = field[spec.index(i, j)];
    if (d < 0.0 && !component[spec.index(i, j)]) return 1e-100;  // detached negative pocket
    return d;
  };
  auto edge_point = [&](int64_t key) {
    bool horizontal = key < (1ll << 40);
    int64_t rem = horizontal ? key : key - (1ll << 40);
    int j = static_cast<int>(rem / nx), i = static_cast<int>(rem % nx);
    double a = value(i, j);
    double b = horizontal ? value(i + 1, j) : value(i, j + 1);
    double t = a / (a - b);
    t = std::clamp(t, 0.0, 1.0);
    Eigen::Vector2d p = spec.node(i, j);
    if (horizontal)
      p.x() += t * spec.h;
    else
      p.y() += t * spec.h;
    return p;
  };

  std::vector<MarchSegment> segments;
  for (int j = 0; j < ny - 1; ++j)
    for (int i = 0; i < nx - 1; ++i) {
      bool touch = component[spec.index(i, j)] || component[spec.index(i + 1, j)] ||
                   component[spec.index(i + 1, j + 1)] || component[spec.index(i, j + 1)];
      if (!touch) continue;
      double v0 = value(i, j), v1 = value(i + 1, j), v2 = value(i + 1, j + 1), v3 = value(i, j + 1);
      int c = (v0 < 0 ? 1 : 0) | (v1 < 0 ? 2 : 0) | (v2 < 0 ? 4 : 0) | (v3 < 0 ? 8 : 0);
      if (c == 0 || c == 15) continue;
      int64_t eb = edge_key(true, i, j, nx);
      int64_t er = edge_key(false, i + 1, j, nx);
      int64_t et = edge_key(true, i, j + 1, nx);
      int64_t el = edge_key(false, i, j, nx);
      auto add = [&](int64_t a, int64_t b) { segments.push_back({a, b}); };
      switch (c) {
        case 1: add(el, eb); break;
        case 2: add(eb, er); break;
        case 3: add(el, er); break;
        case 4: add(er, et); break;
        case 5: {
          double center = 0.25 * (v0 + v1 + v2 + v3);
          if (center < 0) {
            add(el, et);
            add(eb, er);
          } else {
            add(el, eb);
            add(er, et);
          }
          break;
        }
        case 6: add(eb, et); break;
        case 7: add(el, et); break;
        case 8: add(et, el); break;
        case 9: add(eb, et); break;
        case 10: {
          double center = 0.25 * (v0 + v1 + v2 + v3);
          if (center < 0) {
            add(eb, el);
            add(et, er);
          } else {
            add(eb, er);
            add(et, el);
          }
          break;
        }
        case 11: add(er, et); break;
        case 12: add(er, el); break;
        case 13: add(eb, er); break;
        case 14: add(el, eb); break;
        default: break;
      }
    }

  if (segments.empty())
    throw GjeError(ErrorCode::InvalidSection, "no zero contour found for the section");

  // stitch segments into loops via shared edge keys
  std::multimap<int64_t, int> by_edge;
  for (size_t s = 0; s < segments.size(); ++s) {
    by_edge.emplace(segments[s].e0, static_cast<int>(s));
    by_edge.emplace(segments[s].e1, static_cast<int>(s));
  }
  std::vector<char> used(segments.size(), 0);
  std::vector<std::vector<Eigen::Vector2d>> loops;
  for (size_t start = 0; start < segments.size(); ++start) {
    if (used[start]) continue;
    std::vector<int64_t> chain;
    used[start] = 1;
    chain.push_back(segments[start].e0);
    chain.push_back(segments[start].e1);
    for (;;) {
      int64_t tail = chain.back();
      int next = -1;
      auto [lo, hi] = by_edge.equal_range(tail);
      for (auto it = lo; it != hi; ++it)
        if (!used[it->second]) {
          next = it->second;
          break;
        }
      if (next < 0) break;
      used[next] = 1;
      chain.push_back(segments[next].e0 == tail ? segments[next].e1 : segments[next].e0);
    }
    if (chain.size() >= 4 && chain.front() == chain.back()) {
      chain.pop_back();
      std::vector<Eigen::Vector2d> loop;
      loop.reserve(chain.size());
      for (int64_t key : chain) loop.push_back(edge_point(key));
      loops.push_back(std::move(loop));
    }
  }
  if (loops.empty())
    throw GjeError(ErrorCode::InvalidSection, "contour did not close into a loop");

  int pick = -1;
  double best_area = 0.0;
  for (size_t l = 0; l < loops.size(); ++l) {
    double a = std::abs(polygon_area(loops[l]));
    if (point_in_polygon(loops[l], inside_point) && a > best_area) {
      pick = static_cast<int>(l);
      best_area = a;
    }
  }
  if (pick < 0) {
    for (size_t l = 0; l < loops.size(); ++l) {
      double a = std::abs(polygon_area(loops[l]));
      if (a > best_area) {
        pick = static_cast<int>(l);
        best_area = a;
      }
    }
  }
  std::vector<Eigen::Vector2d> poly = loops[pick];
  if (polygon_area(poly) < 0) std::reverse(poly.begin(), poly.end());
  return poly;
}

// ---------------------------------------------------------------------------
// sections

int Section::mask_count() const {
  int c = 0;
  for (uint8_t m : mask) c += m;
  return c;
}

std::array<int, 4> Section::mask_extent() const {
  std::array<int, 4> ext{grid.nx, -1, grid.ny, -1};
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i)
      if (mask[grid.index(i, j)]) {
        ext[0] = std::min(ext[0], i);
        ext[1] = std::max(ext[1], i);
        ext[2] = std::min(ext[2], j);
        ext[3] = std::max(ext[3], j);
      }
  return ext;
}

Section extract_section(const GridFunction& u, const GenFunBase& gf, const Eigen::Vector2d& x0,
                        double h) {
  const GridSpec& spec = u.spec();
  double u0 = u.interp(x0);
  Eigen::Vector2d p0 = u.gradient(x0);
  YZSolution yz;
  try {
    yz = solve_yz(gf, x0, u0, p0);
  } catch (const GjeError& e) {
    throw GjeError(ErrorCode::SupportSolveFailed, e.what());
  }
  double zh = yz.z - h;

  Section s;
  s.x0 = x0;
  s.y0 = yz.y;
  s.z0 = yz.z;
  s.h = h;
  s.grid = spec;
  s.tag = CoordinateTag::Raw;

  std::vector<double> field(spec.size());
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) {
      Eigen::Vector2d xn = spec.node(i, j);
      field[spec.index(i, j)] = u.at(i, j) - gf.eval(xn, yz.y, zh);
    }

  int i0, j0;
  spec.nearest(x0, i0, j0);
  if (field[spec.index(i0, j0)] >= 0.0)
    throw GjeError(ErrorCode::InvalidSection, "base node is not below the lifted support");

  s.mask.assign(spec.size(), 0);
  std::deque<std::pair<int, int>> queue{{i0, j0}};
  s.mask[spec.index(i0, j0)] = 1;
  double sup = 0.0;
  while (!queue.empty()) {
    auto [i, j] = queue.front();
    queue.pop_front();
    if (spec.on_rim(i, j))
      throw GjeError(ErrorCode::SectionTouchesBoundary,
                     "section reaches the grid rim at h = " + std::to_string(h));
    sup = std::max(sup, -field[spec.index(i, j)]);
    const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      int ii = i + di[d], jj = j + dj[d];
      if (!spec.in_range(ii, jj) || s.mask[spec.index(ii, jj)]) continue;
      if (field[spec.index(ii, jj)] < 0.0) {
        s.mask[spec.index(ii, jj)] = 1;
        queue.emplace_back(ii, jj);
      }
    }
  }
  s.sup_defect = sup;
  s.polygon = contour_polygon(spec, field, s.mask, x0);
  return s;
}

Section section_to_tilde(const Section& s, const GenFunBase& gf) {
  if (s.tag == CoordinateTag::Tilde) return s;
  Section t = s;
  t.tag = CoordinateTag::Tilde;
  double zh = s.z0 - s.h;
  t.polygon.clear();
  t.polygon.reserve(s.polygon.size());
  for (const auto& p : s.polygon) t.polygon.push_back(to_tilde_point(gf, p, s.y0, zh));
  t.x0 = to_tilde_point(gf, s.x0, s.y0, zh);
  if (polygon_area(t.polygon) < 0) std::reverse(t.polygon.begin(), t.polygon.end());
  return t;
}

// ---------------------------------------------------------------------------
// minimum enclosing ellipsoid

double Ellipsoid::level(const Eigen::VectorXd& p) const {
  Eigen::VectorXd q = rotation.transpose() * (p - center);
  double acc = 0.0;
  for (int i = 0; i < dim(); ++i) acc += (q[i] / radii[i]) * (q[i] / radii[i]);
  return acc;
}

bool Ellipsoid::contains(const Eigen::VectorXd& p, double tol) const {
  return level(p) <= 1.0 + tol;
}

Eigen::VectorXd Ellipsoid::boundary_point(double angle) const {
  Eigen::Vector2d q(radii[0] * std::cos(angle), radii[1] * std::sin(angle));
  return center + rotation * q;
}

Ellipsoid min_enclosing_ellipsoid(const std::vector<Eigen::Vector2d>& points, double tol,
                                  int max_iter) {
  const int n = 2, d = n + 1;
  std::vector<Eigen::Vector2d> hull = convex_hull(points);
  if (hull.size() < 3)
    throw GjeError(ErrorCode::DegenerateInput, "point hull has fewer than 3 vertices");
  {
    double diam = 0.0;
    for (const auto& p : hull) diam = std::max(diam, (p - hull[0]).norm());
    if (std::abs(polygon_area(hull)) < 1e-12 * diam * diam)
      throw GjeError(ErrorCode::DegenerateInput, "point hull has empty interior");
  }
  const int m = static_cast<int>(hull.size());
  std::vector<Eigen::Vector3d> q(m);
  for (int i = 0; i < m; ++i) q[i] = Eigen::Vector3d(hull[i].x(), hull[i].y(), 1.0);

  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::Matrix3d minv;
  auto refresh = [&]() {
    Eigen::Matrix3d mm = Eigen::Matrix3d::Zero();
    for (int i = 0; i < m; ++i) mm += w[i] * q[i] * q[i].transpose();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(mm);
    if (!lu.isInvertible())
      throw GjeError(ErrorCode::DegenerateInput, "weighted scatter matrix is singular");
    minv = lu.inverse();
  };
  refresh();

  // Frank-Wolfe with away steps on the lifted scatter matrix; add steps grow
  // the heaviest violator, away steps shrink interior support points.
  for (int iter = 0; iter < max_iter; ++iter) {
    double k_plus = -1.0, k_minus = std::numeric_limits<double>::infinity();
    int j_plus = -1, j_minus = -1;
    for (int i = 0; i < m; ++i) {
      double wi = q[i].dot(minv * q[i]);
      if (wi > k_plus) {
        k_plus = wi;
        j_plus = i;
      }
      if (w[i] > 1e-14 && wi < k_minus) {
        k_minus = wi;
        j_minus = i;
      }
    }
    bool add_ok = k_plus > d * (1.0 + tol);
    bool away_ok = j_minus >= 0 && k_minus < d * (1.0 - tol);
    if (!add_ok && !away_ok) break;
    int j;
    bool away;
    if (!away_ok || (add_ok && (k_plus - d) >= (d - k_minus))) {
      j = j_plus;
      away = false;
    } else {
      j = j_minus;
      away = true;
    }
    double kj = q[j].dot(minv * q[j]);
    double alpha;
    if (std::abs(kj - 1.0) < 1e-12) {
      alpha = away ? -w[j] / (1.0 - w[j]) : 0.0;
      if (alpha == 0.0) break;
    } else {
      alpha = (kj - d) / (d * (kj - 1.0));
      if (away) {
        if (alpha >= 0.0) alpha = -w[j] / (1.0 - w[j]);       // degenerate curvature: full drop
        alpha = std::max(alpha, -w[j] / (1.0 - w[j]));        // keep weights >= 0
      }
    }
    w *= (1.0 - alpha);
    w[j] += alpha;
    // rank-one update of the inverse scatter matrix
    Eigen::Vector3d mq = minv * q[j];
    double denom = (1.0 - alpha) + alpha * q[j].dot(mq);
    if (std::abs(denom) < 1e-14 || (iter & 255) == 255) {
      refresh();  // shed accumulated roundoff
    } else {
      minv = (minv - (alpha / denom) * mq * mq.transpose()) / (1.0 - alpha);
    }
  }

  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (int i = 0; i < m; ++i) c += w[i] * hull[i];
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (int i = 0; i < m; ++i) scatter += w[i] * hull[i] * hull[i].transpose();
  scatter -= c * c.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(scatter);
  if (es.eigenvalues()[0] <= 1e-13 * es.eigenvalues()[1])
    throw GjeError(ErrorCode::DegenerateInput, "enclosing ellipsoid degenerates to a segment");

  // scale so every input point is inside: level = (p-c)^T S^{-1} (p-c) / n
  Eigen::Matrix2d sinv = scatter.inverse();
  double smax = 0.0;
  for (const auto& p : hull)
    smax = std::max(smax, double((p - c).transpose() * sinv * (p - c)));
  double scale = std::max(smax, static_cast<double>(n));

  Ellipsoid e;
  e.center = c;
  e.rotation = Eigen::MatrixXd(2, 2);
  e.radii = Eigen::VectorXd(2);
  // descending radii
  e.radii[0] = std::sqrt(scale * es.eigenvalues()[1]);
  e.radii[1] = std::sqrt(scale * es.eigenvalues()[0]);
  e.rotation.col(0) = es.eigenvectors().col(1);
  e.rotation.col(1) = es.eigenvectors().col(0);
  if (e.rotation.determinant() < 0) e.rotation.col(1) *= -1.0;
  return e;
}

double good_shape(const Ellipsoid& e) { return e.radii[0] / e.radii[e.dim() - 1]; }

SandwichCheck sandwich_check(const Ellipsoid& e, const std::vector<Eigen::Vector2d>& points) {
  SandwichCheck out;
  for (const auto& p : points) {
    Eigen::VectorXd pv = p;
    out.points_outside = std::max(out.points_outside, e.level(pv) - 1.0);
  }
  std::vector<Eigen::Vector2d> hull = convex_hull(points);
  const double shrink = 1.0 / e.dim();
  for (int k = 0; k < 720; ++k) {
    double ang = 2.0 * M_PI * k / 720;
    Eigen::Vector2d q(shrink * e.radii[0] * std::cos(ang), shrink * e.radii[1] * std::sin(ang));
    Eigen::Vector2d p = Eigen::Vector2d(e.center) + Eigen::Matrix2d(e.rotation) * q;
    if (!point_in_polygon(hull, p))
      out.shrunk_outside = std::max(out.shrunk_outside, distance_to_polygon_boundary(hull, p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// section estimates

double mask_integral(const GridSpec& spec, const std::vector<double>& field,
                     const std::vector<uint8_t>& component,
                     const std::function<double(const Eigen::Vector2d&)>& f) {
  const double cell = spec.h * spec.h;
  double acc = 0.0;
  auto value = [&](int i, int j) {
    double d = field[spec.index(i, j)];
    if (d < 0.0 && !component[spec.index(i, j)]) return 1e-100;
    return d;
  };
  for (int j = 0; j < spec.ny - 1; ++j)
    for (int i = 0; i < spec.nx - 1; ++i) {
      int inside = (component[spec.index(i, j)] ? 1 : 0) + (component[spec.index(i + 1, j)] ? 1 : 0) +
                   (component[spec.index(i + 1, j + 1)] ? 1 : 0) +
                   (component[spec.index(i, j + 1)] ? 1 : 0);
      if (inside == 0) continue;
      double v0 = value(i, j), v1 = value(i + 1, j), v2 = value(i + 1, j + 1), v3 = value(i, j + 1);
      bool crossing = !(v0 < 0 && v1 < 0 && v2 < 0 && v3 < 0);
      Eigen::Vector2d base = spec.node(i, j);
      if (!crossing) {
        acc += cell * f(base + Eigen::Vector2d(0.5 * spec.h, 0.5 * spec.h));
        continue;
      }
      const int sub = 8;
      double subcell = cell / (sub * sub);
      for (int b = 0; b < sub; ++b)
        for (int a = 0; a < sub; ++a) {
          double fx = (a + 0.5) / sub, fy = (b + 0.5) / sub;
          double d = (1 - fx) * (1 - fy) * v0 + fx * (1 - fy) * v1 + fx * fy * v2 +
                     (1 - fx) * fy * v3;
          if (d < 0.0) acc += subcell * f(base + spec.h * Eigen::Vector2d(fx, fy));
        }
    }
  return acc;
}

SectionEstimates verify_section_estimates(const GridFunction& u, const GenFunBase& gf,
                                          const Eigen::Vector2d& x0,
                                          const std::vector<double>& h_list,
                                          const std::function<double(const Eigen::Vector2d&)>& f,
                                          double lambda, double Lambda) {
  (void)Lambda;
  const int n = 2;
  SectionEstimates out;
  for (double h : h_list) {
    Section s = extract_section(u, gf, x0, h);
    Section st = section_to_tilde(s, gf);
    Ellipsoid e = min_enclosing_ellipsoid(st.polygon);

    // recompute the defect field for the measure integral
    const GridSpec& spec = u.spec();
    std::vector<double> field(spec.size());
    double zh = s.z0 - s.h;
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i)
        field[spec.index(i, j)] = u.at(i, j) - gf.eval(spec.node(i, j), s.y0, zh);

    SectionEstimateRow row;
    row.h = h;
    row.sup_defect = s.sup_defect;
    row.area_raw = polygon_area(s.polygon);
    row.nu = mask_integral(spec, field, s.mask, f);
    row.area_tilde = std::abs(polygon_area(st.polygon));
    row.r1 = e.radii[0];
    row.rn = e.radii[1];
    row.ratio_volume = std::pow(h, n) / (row.area_raw * row.nu);
    row.ratio_density = std::pow(h, n) / (lambda * row.area_raw * row.area_raw);
    row.ratio_axes = std::pow(h, 0.5 * n) / (row.r1 * row.rn);
    row.ratio_shape = h * row.r1 * row.r1 / (row.rn * row.rn);
    row.convexity_defect = polygon_convexity_defect(st.polygon);

    double eig_lo = std::numeric_limits<double>::infinity(), eig_hi = 0.0;
    int step = std::max(1, s.mask_count() / 64);
    int seen = 0;
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i) {
        if (!s.mask[spec.index(i, j)]) continue;
        if (seen++ % step) continue;
        GenDerivs d = gf.derivs(spec.node(i, j), s.y0, zh, 2);
        Eigen::Matrix2d em = d.gxy - (d.gxz / d.gz) * d.gy.transpose();
        Eigen::JacobiSVD<Eigen::Matrix2d> svd(em);
        eig_hi = std::max(eig_hi, svd.singularValues()[0]);
        eig_lo = std::min(eig_lo, svd.singularValues()[1]);
      }
    row.e_eig_ratio = eig_hi / eig_lo;
    out.rows.push_back(row);
  }

  // monotone drift by more than 10x across the h range flags unboundedness;
  // rows are ordered by increasing h, so "drift as h -> 0" means decreasing
  // index direction
  auto column = [&](auto getter, const char* name, bool only_growth_at_small_h) {
    if (out.rows.size() < 3 || out.drift_flag) return;
    std::vector<double> v;
    for (const auto& r : out.rows) v.push_back(getter(r));
    bool inc = true, dec = true;
    for (size_t i = 1; i < v.size(); ++i) {
      inc = inc && v[i] >= v[i - 1];
      dec = dec && v[i] <= v[i - 1];
    }
    double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    bool drifting = only_growth_at_small_h ? (dec && hi > 10.0 * lo)
                                           : ((inc || dec) && hi > 10.0 * lo);
    if (drifting) {
      out.drift_flag = true;
      out.drifting_column = name;
    }
  };
  column([](const SectionEstimateRow& r) { return r.ratio_volume; }, "ratio_volume", false);
  column([](const SectionEstimateRow& r) { return r.ratio_density; }, "ratio_density", false);
  column([](const SectionEstimateRow& r) { return r.ratio_axes; }, "ratio_axes", false);
  // the shape ratio carries an explicit factor of h; only blow-up as h -> 0
  // contradicts the bound
  column([](const SectionEstimateRow& r) { return r.ratio_shape; }, "ratio_shape", true);
  return out;
}

// ---------------------------------------------------------------------------
// normalization

Eigen::Vector2d NormalizedSection::bar_to_tilde(const Eigen::Vector2d& xb) const {
  Eigen::Vector2d scaled(ellipsoid.radii[0] * xb.x(), ellipsoid.radii[1] * xb.y());
  return Eigen::Vector2d(ellipsoid.center) + Eigen::Matrix2d(ellipsoid.rotation) * scaled;
}

NormalizedSection normalize_section(const GridFunction& u, const GenFun& gf, const Section& raw,
                                    int v_grid_nodes) {
  Section st = section_to_tilde(raw, gf);
  NormalizedSection ns;
  ns.ellipsoid = min_enclosing_ellipsoid(st.polygon);
  ns.y0 = raw.y0;
  ns.z0 = raw.z0;
  ns.h = raw.h;
  const double zh = raw.z0 - raw.h;

  Eigen::Matrix2d rot = ns.ellipsoid.rotation;
  Eigen::Vector2d cen = ns.ellipsoid.center;
  Eigen::Vector2d rad(ns.ellipsoid.radii[0], ns.ellipsoid.radii[1]);

  auto to_bar = [&](const Eigen::Vector2d& xt) {
    Eigen::Vector2d q = rot.transpose() * (xt - cen);
    return Eigen::Vector2d(q.x() / rad.x(), q.y() / rad.y());
  };

  ns.polygon_bar.reserve(st.polygon.size());
  for (const auto& p : st.polygon) ns.polygon_bar.push_back(to_bar(p));

  // sandwich B_{1/n} subset U subset B_1
  for (const auto& p : ns.polygon_bar)
    if (p.norm() > 1.0 + 1e-6)
      throw GjeError(ErrorCode::InvalidSection, "normalized section leaks out of the unit ball");
  for (int k = 0; k < 360; ++k) {
    double ang = 2 * M_PI * k / 360;
    Eigen::Vector2d p(0.5 * (1.0 - 1e-9) * std::cos(ang), 0.5 * (1.0 - 1e-9) * std::sin(ang));
    if (!point_in_polygon(ns.polygon_bar, p))
      throw GjeError(ErrorCode::InvalidSection, "normalized section misses B_{1/2}");
  }

  GridSpec vs;
  vs.nx = vs.ny = v_grid_nodes;
  vs.h = 2.1 / (v_grid_nodes - 1);
  vs.origin = Eigen::Vector2d(-1.05, -1.05);
  std::vector<double> vvals(vs.size(), 0.0);
  ns.mask.assign(vs.size(), 0);

  Eigen::VectorXd x_seed = raw.x0;
  double inf_v = 0.0;
  for (int j = 0; j < vs.ny; ++j)
    for (int i = 0; i < vs.nx; ++i) {
      Eigen::Vector2d xb = vs.node(i, j);
      Eigen::Vector2d xt = ns.bar_to_tilde(xb);
      bool in_mask = point_in_polygon(ns.polygon_bar, xb);
      double val = 0.0;
      try {
        Eigen::VectorXd xr = from_tilde_point(gf, xt, raw.y0, zh, &x_seed);
        if (u.covers(Eigen::Vector2d(xr))) {
          val = (u.interp(Eigen::Vector2d(xr)) - gf.eval(xr, raw.y0, zh)) / raw.h;
        } else {
          in_mask = false;
        }
      } catch (const GjeError&) {
        in_mask = false;
      }
      vvals[vs.index(i, j)] = val;
      if (in_mask) {
        ns.mask[vs.index(i, j)] = 1;
        inf_v = std::min(inf_v, val);
      }
    }
  ns.v = GridFunction(vs, std::move(vvals));
  ns.inf_v = inf_v;

  double bmax = 0.0;
  for (const auto& p : st.polygon) {
    Eigen::VectorXd xr = from_tilde_point(gf, p, raw.y0, zh, &x_seed);
    if (!u.covers(Eigen::Vector2d(xr))) continue;
    double val = (u.interp(Eigen::Vector2d(xr)) - gf.eval(xr, raw.y0, zh)) / raw.h;
    bmax = std::max(bmax, std::abs(val));
  }
  ns.boundary_max_abs_v = bmax;

  // C with C^{-1} <= |inf v| <= C from sup/inf of |g_z| over the section
  double gz_lo = std::numeric_limits<double>::infinity(), gz_hi = 0.0;
  const GridSpec& spec = u.spec();
  int step = std::max(1, raw.mask_count() / 64);
  int seen = 0;
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) {
      if (!raw.mask[spec.index(i, j)]) continue;
      if (seen++ % step) continue;
      for (double zq : {raw.z0, raw.z0 - 0.5 * raw.h, zh}) {
        GenDerivs d = gf.derivs(spec.node(i, j), raw.y0, zq, 1);
        gz_lo = std::min(gz_lo, std::abs(d.gz));
        gz_hi = std::max(gz_hi, std::abs(d.gz));
      }
    }
  ns.gz_bound = std::max(gz_hi, 1.0 / gz_lo);
  return ns;
}

NormalizedCoefficients normalized_coefficients(
    const GridFunction& u, const GenFun& gf, const NormalizedSection& ns,
    const std::function<double(const Eigen::Vector2d&)>& f) {
  const double h = ns.h;
  const double zh = ns.z0 - h;
  auto tilde = std::make_shared<TildeGenFun>(gf, ns.y0, zh);
  Eigen::Matrix2d rot = ns.ellipsoid.rotation;
  Eigen::Matrix2d rd = rot * Eigen::Vector2d(ns.ellipsoid.radii[0], ns.ellipsoid.radii[1]).asDiagonal();
  Eigen::VectorXd y0 = ns.y0;
  (void)u;

  // shared reconstruction of the raw phase point from (x_bar, v, Dv)
  auto reconstruct = [=, &gf](const Eigen::Vector2d& xb, double v, const Eigen::Vector2d& dv,
                              Eigen::VectorXd& x_out, double& u_out, Eigen::VectorXd& p_out) {
    Eigen::Vector2d xt = ns.bar_to_tilde(xb);
    Eigen::VectorXd xr = from_tilde_point(gf, xt, y0, zh, nullptr);
    GenDerivs d = gf.derivs(xr, y0, zh, 2);
    // d x_bar / d x = D^{-1} R^T Jphi with Jphi(i,k) = E(k,i)/g_z
    Eigen::Matrix2d jphi;
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k)
        jphi(i, k) = (d.gxy(k, i) * d.gz - d.gy[i] * d.gxz[k]) / (d.gz * d.gz);
    Eigen::Matrix2d dbar_dx = rd.inverse() * jphi;
    x_out = xr;
    u_out = h * v + d.g;
    p_out = h * dbar_dx.transpose() * dv + d.gx;
  };

  NormalizedCoefficients nc;
  nc.a_bar = [=, &gf](const Eigen::Vector2d& xb, double v, const Eigen::Vector2d& dv) {
    Eigen::VectorXd xr;
    double uval;
    Eigen::VectorXd p;
    reconstruct(xb, v, dv, xr, uval, p);
    YZSolution yz = solve_yz(gf, xr, uval, p, &y0, &zh);
    Eigen::Vector2d xt = ns.bar_to_tilde(xb);
    Eigen::Matrix2d gtt_sol = tilde->derivs(xt, yz.y, yz.z, 2).gxx;
    Eigen::Matrix2d gtt_sup = tilde->derivs(xt, y0, zh, 2).gxx;
    return Eigen::Matrix2d((rd.transpose() * (gtt_sol - gtt_sup) * rd) / h);
  };
  nc.b_bar = [=, &gf](const Eigen::Vector2d& xb, double v, const Eigen::Vector2d& dv) {
    Eigen::VectorXd xr;
    double uval;
    Eigen::VectorXd p;
    reconstruct(xb, v, dv, xr, uval, p);
    PhasePoint q{xr, uval, p};
    CoefficientOptions opts;
    opts.with_dp_a = false;
    opts.y_seed = &y0;
    opts.z_seed = &zh;
    MateCoefficients mc = coefficients(gf, q, opts);
    GenDerivs d = gf.derivs(xr, y0, zh, 2);
    Eigen::Matrix2d e0 = d.gxy - (d.gxz / d.gz) * d.gy.transpose();
    double det_dx = (d.gz * d.gz) / e0.determinant();  // inverse Jacobian of the tilde map
    double r1r2 = ns.ellipsoid.radii[0] * ns.ellipsoid.radii[1];
    return (r1r2 * r1r2) / (h * h) * det_dx * det_dx * std::abs(mc.det_e) * f(Eigen::Vector2d(xr));
  };
  return nc;
}

double normalized_equation_residual(const NormalizedSection& ns, const NormalizedCoefficients& nc) {
  const GridSpec& vs = ns.v.spec();
  double worst = 0.0;
  for (int j = 1; j < vs.ny - 1; ++j)
    for (int i = 1; i < vs.nx - 1; ++i) {
      bool ok = true;
      for (int b = -1; b <= 1 && ok; ++b)
        for (int a = -1; a <= 1 && ok; ++a)
          if (!ns.mask[vs.index(i + a, j + b)]) ok = false;
      if (!ok) continue;
      Eigen::Vector2d xb = vs.node(i, j);
      Eigen::Matrix2d hess = ns.v.hessian_node(i, j);
      Eigen::Vector2d dv = ns.v.gradient_node(i, j);
      double v = ns.v.at(i, j);
      Eigen::Matrix2d w = hess - nc.a_bar(xb, v, dv);
      double res = det_plus(w, 1e-10) - nc.b_bar(xb, v, dv);
      worst = std::max(worst, std::abs(res));
    }
  return worst;
}

double denormalize_defect(const GridFunction& u, const GenFun& gf, const Section& raw,
                          const NormalizedSection& ns) {
  const GridSpec& spec = u.spec();
  const double zh = raw.z0 - raw.h;
  Eigen::Matrix2d rot = ns.ellipsoid.rotation;
  Eigen::Vector2d cen = ns.ellipsoid.center;
  double worst = 0.0;
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) {
      if (!raw.mask[spec.index(i, j)]) continue;
      Eigen::Vector2d x = spec.node(i, j);
      Eigen::Vector2d xt = to_tilde_point(gf, x, raw.y0, zh);
      Eigen::Vector2d q = rot.transpose() * (xt - cen);
      Eigen::Vector2d xb(q.x() / ns.ellipsoid.radii[0], q.y() / ns.ellipsoid.radii[1]);
      if (!ns.v.covers(xb)) continue;
      double u_rec = raw.h * ns.v.interp(xb) + gf.eval(x, raw.y0, zh);
      worst = std::max(worst, std::abs(u_rec - u.at(i, j)));
    }
  return worst;
}

}  // namespace gjelab
