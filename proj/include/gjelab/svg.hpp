#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace gjelab {

/// Minimal static SVG plots: data series on linear or log10 axes, polygon
/// overlays, reference lines. Just enough for the batch reports.
class SvgPlot {
 public:
  SvgPlot(std::string title, bool log_x = false, bool log_y = false)
      : title_(std::move(title)), log_x_(log_x), log_y_(log_y) {}

  void add_series(const std::string& name, const std::vector<double>& xs,
                  const std::vector<double>& ys, const std::string& color, bool line = true,
                  bool markers = true);
  void add_polygon(const std::vector<Eigen::Vector2d>& poly, const std::string& color);
  void add_line(double x0, double y0, double x1, double y1, const std::string& color);

  void write(const std::filesystem::path& path) const;

 private:
  struct Series {
    std::string name, color;
    std::vector<double> xs, ys;
    bool line, markers;
  };
  struct Poly {
    std::vector<Eigen::Vector2d> pts;
    std::string color;
  };
  struct Line {
    double x0, y0, x1, y1;
    std::string color;
  };

  std::string title_;
  bool log_x_, log_y_;
  std::vector<Series> series_;
  std::vector<Poly> polys_;
  std::vector<Line> lines_;
};

}  // namespace gjelab
