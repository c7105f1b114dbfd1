#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gjelab {

/// Fixed-column CSV with 17-significant-digit floats, so identical runs diff
/// byte-for-byte.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add_row(std::span<const double> values);
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  int column_index(const std::string& name) const;  // -1 if absent

  void write(const std::filesystem::path& path) const;
  static CsvTable read(const std::filesystem::path& path);

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

std::string format_g17(double v);

}  // namespace gjelab
