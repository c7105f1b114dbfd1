#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "gjelab/genfun.hpp"
#include "gjelab/grid.hpp"

namespace gjelab {

/// Load a generating-function file: a JSON document with fields
/// {dimension, g, U_box, V_box, z_interval, J_interval,
///  diagonal_exclusion_radius}.
GenFun load_genfun_file(const std::filesystem::path& path);

/// Scalar function of x parsed from the expression grammar (y and z evaluate
/// as zero; intended for boundary data, densities and closed-form surfaces).
std::function<double(const Eigen::Vector2d&)> expr_function(const std::string& src);

void write_grid_file(const std::filesystem::path& path, const GridFunction& g,
                     uint64_t source_hash);
GridFunction read_grid_file(const std::filesystem::path& path, uint64_t* source_hash = nullptr);

struct RunOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<uint64_t> seed;
  std::optional<int> grid;
  bool verbose{false};
};

/// Run one experiment described by a config file. Writes CSV tables, SVG
/// plots, a resolved config and the run manifest into the output directory.
/// Exit status: 0 all gates pass, 1 a gate failed, 2 invalid configuration.
int run_experiment_file(const std::filesystem::path& config_path, const RunOverrides& overrides);

/// Numeric diff of two run directories; emits diff_report.txt (and a
/// convergence-order table when the runs are solve studies at different
/// grids). Exit status: 0 match/informational, 1 mismatch beyond tolerance,
/// 2 schema mismatch.
int run_compare(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                bool verbose);

}  // namespace gjelab
