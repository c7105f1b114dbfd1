#include "gjelab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gjelab/errors.hpp"

namespace gjelab {

void SvgPlot::add_series(const std::string& name, const std::vector<double>& xs,
                         const std::vector<double>& ys, const std::string& color, bool line,
                         bool markers) {
  series_.push_back({name, color, xs, ys, line, markers});
}

void SvgPlot::add_polygon(const std::vector<Eigen::Vector2d>& poly, const std::string& color) {
  polys_.push_back({poly, color});
}

void SvgPlot::add_line(double x0, double y0, double x1, double y1, const std::string& color) {
  lines_.push_back({x0, y0, x1, y1, color});
}

void SvgPlot::write(const std::filesystem::path& path) const {
  const int W = 720, H = 520, ML = 70, MR = 20, MT = 40, MB = 50;
  auto tx = [&](double v) { return log_x_ ? std::log10(std::max(v, 1e-300)) : v; };
  auto ty = [&](double v) { return log_y_ ? std::log10(std::max(v, 1e-300)) : v; };

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto grow = [&](double x, double y) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  };
  for (const auto& s : series_)
    for (size_t i = 0; i < s.xs.size(); ++i) grow(tx(s.xs[i]), ty(s.ys[i]));
  for (const auto& p : polys_)
    for (const auto& q : p.pts) grow(tx(q.x()), ty(q.y()));
  for (const auto& l : lines_) {
    grow(tx(l.x0), ty(l.y0));
    grow(tx(l.x1), ty(l.y1));
  }
  if (xmin > xmax) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  double padx = 0.05 * (xmax - xmin), pady = 0.05 * (ymax - ymin);
  xmin -= padx;
  xmax += padx;
  ymin -= pady;
  ymax += pady;

  auto px = [&](double v) { return ML + (tx(v) - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double v) { return H - MB - (ty(v) - ymin) / (ymax - ymin) * (H - MT - MB); };

  std::ofstream out(path);
  if (!out) throw GjeError(ErrorCode::ConfigInvalid, "cannot write " + path.string());
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title_
      << "</text>\n";
  out << "<rect x='" << ML << "' y='" << MT << "' width='" << (W - ML - MR) << "' height='"
      << (H - MT - MB) << "' fill='none' stroke='black'/>\n";

  // axis ticks
  for (int k = 0; k <= 4; ++k) {
    double fx = xmin + k * (xmax - xmin) / 4;
    double fy = ymin + k * (ymax - ymin) / 4;
    double vx = log_x_ ? std::pow(10.0, fx) : fx;
    double vy = log_y_ ? std::pow(10.0, fy) : fy;
    double sx = ML + k * (W - ML - MR) / 4.0;
    double sy = H - MB - k * (H - MT - MB) / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", vx);
    out << "<text x='" << sx << "' y='" << H - MB + 18 << "' text-anchor='middle' font-size='11'>"
        << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", vy);
    out << "<text x='" << ML - 8 << "' y='" << sy + 4 << "' text-anchor='end' font-size='11'>"
        << buf << "</text>\n";
  }

  for (const auto& p : polys_) {
    out << "<polygon points='";
    for (const auto& q : p.pts) out << px(q.x()) << "," << py(q.y()) << " ";
    out << "' fill='none' stroke='" << p.color << "'/>\n";
  }
  for (const auto& l : lines_) {
    out << "<line x1='" << px(l.x0) << "' y1='" << py(l.y0) << "' x2='" << px(l.x1) << "' y2='"
        << py(l.y1) << "' stroke='" << l.color << "' stroke-dasharray='5,4'/>\n";
  }
  int legend_y = MT + 16;
  for (const auto& s : series_) {
    if (s.line && s.xs.size() > 1) {
      out << "<polyline fill='none' stroke='" << s.color << "' points='";
      for (size_t i = 0; i < s.xs.size(); ++i) out << px(s.xs[i]) << "," << py(s.ys[i]) << " ";
      out << "'/>\n";
    }
    if (s.markers)
      for (size_t i = 0; i < s.xs.size(); ++i)
        out << "<circle cx='" << px(s.xs[i]) << "' cy='" << py(s.ys[i]) << "' r='3' fill='"
            << s.color << "'/>\n";
    out << "<text x='" << W - MR - 6 << "' y='" << legend_y << "' text-anchor='end' font-size='12' fill='"
        << s.color << "'>" << s.name << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace gjelab
