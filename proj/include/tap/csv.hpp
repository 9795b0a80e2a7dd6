#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "tap/common.hpp"
#include "tap/strutil.hpp"

namespace tap {

// Fixed column order, locale-independent formatting via strutil.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns)
      : out_(path, std::ios::trunc), n_cols_(columns.size()) {
    if (!out_) throw DataError("csv: cannot open for writing: " + path);
    write_row(columns);
  }

  void write_row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_)
      throw DimensionError("csv: cell count does not match the header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::size_t n_cols_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw ParseError("csv: missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open: " + path);
  CsvTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = strutil::split(line, ',');
    if (line_no == 1) {
      table.columns = cells;
      continue;
    }
    if (cells.size() != table.columns.size())
      throw ParseError("csv: line " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(table.columns.size()));
    table.rows.push_back(cells);
  }
  if (table.columns.empty())
    throw ParseError("csv: empty file: " + path);
  return table;
}

}  // namespace tap
