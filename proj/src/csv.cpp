#include "gjelab/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "gjelab/errors.hpp"

namespace gjelab {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void CsvTable::add_row(std::span<const double> values) {
  if (values.size() != columns_.size())
    throw GjeError(ErrorCode::SchemaMismatch, "row width does not match the column set");
  rows_.emplace_back(values.begin(), values.end());
}

int CsvTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i] == name) return static_cast<int>(i);
  return -1;
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw GjeError(ErrorCode::ConfigInvalid, "cannot write " + path.string());
  for (size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << columns_[i];
  out << "\n";
  for (const auto& row : rows_) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_g17(row[i]);
    out << "\n";
  }
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GjeError(ErrorCode::ConfigInvalid, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw GjeError(ErrorCode::SchemaMismatch, "empty csv " + path.string());
  CsvTable t;
  std::stringstream head(line);
  std::string cell;
  while (std::getline(head, cell, ',')) t.columns_.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != t.columns_.size())
      throw GjeError(ErrorCode::SchemaMismatch, "ragged csv " + path.string());
    t.rows_.push_back(std::move(vals));
  }
  return t;
}

}  // namespace gjelab
