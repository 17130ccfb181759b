#pragma once

// Minimal CSV reading/writing for the plain numeric tables this project
// exchanges.  No quoting or embedded separators; empty cells mean missing.

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eventseg/common.hpp"

namespace eventseg {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open file: " + path);
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      table.header = detail::split_csv_line(line);
      if (table.header.empty() || (table.header.size() == 1 && table.header[0].empty()))
        throw parse_error("empty CSV header in " + path, line_no);
      continue;
    }
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != table.header.size())
      throw parse_error("row has " + std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(table.header.size()) + " in " + path,
                        line_no);
    table.rows.push_back(std::move(cells));
  }
  return table;
}

// Empty cell -> missing (NaN).  Anything else must parse as a double.
inline double parse_cell(const std::string& cell, std::size_t line_no) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw parse_error("cannot parse numeric cell '" + cell + "'", line_no);
  return value;
}

// Shortest representation that round-trips a double exactly.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class CsvWriter {
public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw error("cannot open file for writing: " + path);
  }

  void header(const std::vector<std::string>& names) { line(names); }

  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void numeric_line(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_double(cells[i]);
    }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

}  // namespace eventseg
