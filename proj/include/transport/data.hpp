#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "transport/linalg.hpp"

namespace transport {

enum class Mode { difference, ratio };

inline std::string mode_name(Mode m) { return m == Mode::difference ? "difference" : "ratio"; }

// One row of the pooled sample. Absence encoding: s=0, a=-1, y=NaN.
struct Observation {
  int g = 0;
  int s = 0;
  int a = -1;
  double y = std::numeric_limits<double>::quiet_NaN();
  Vector x;
  bool has_s() const { return s > 0; }
  bool has_a() const { return a >= 0; }
  bool has_y() const { return !std::isnan(y); }
};

// Immutable after load; safe to share read-only across parallel workers.
struct StudyDataset {
  Mode mode = Mode::difference;
  int m = 0;
  Eigen::VectorXi g, s, a;
  Vector y;
  Matrix x;
  std::vector<std::string> xnames;
  std::vector<std::string> warnings;

  Eigen::Index n() const { return g.size(); }
  Eigen::Index p() const { return x.cols(); }

  Eigen::Index n_target() const { return (g.array() == 1).count(); }
  Eigen::Index n_source() const { return n() - n_target(); }
  double alpha_hat() const { return static_cast<double>(n_target()) / static_cast<double>(n()); }

  Observation row(Eigen::Index i) const {
    Observation o;
    o.g = g[i];
    o.s = s[i];
    o.a = a[i];
    o.y = y[i];
    o.x = x.row(i).transpose();
    return o;
  }
};

inline void validate(const StudyDataset& d) {
  const Eigen::Index n = d.n();
  if (n == 0) throw DataError("dataset is empty");
  if (d.n_target() == 0) throw DataError("dataset has no target rows (g=1)");
  if (d.n_source() == 0) throw DataError("dataset has no source rows (g=0)");
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string at = " at row " + std::to_string(i + 1);
    if (d.g[i] != 0 && d.g[i] != 1) throw DataError("g must be 0 or 1" + at);
    if (!d.x.row(i).allFinite()) throw DataError("non-finite covariate" + at);
    if (d.g[i] == 0) {
      if (d.s[i] < 1 || d.s[i] > d.m) throw DataError("trial id outside 1.." + std::to_string(d.m) + at);
      if (d.a[i] != 0 && d.a[i] != 1) throw DataError("treatment must be 0 or 1 on source rows" + at);
      if (std::isnan(d.y[i]) || !std::isfinite(d.y[i])) throw DataError("missing or non-finite outcome on source row" + at);
      if (d.mode == Mode::ratio && d.y[i] < 0.0) throw DataError("negative outcome in ratio mode" + at);
    } else {
      if (d.s[i] != 0) throw DataError("trial id on target row" + at);
      if (d.mode == Mode::difference) {
        if (d.a[i] != -1) throw DataError("treatment on target row" + at);
      } else {
        if (d.a[i] == 1) throw DataError("treated unit in target" + at);
        if (d.a[i] != 0) throw DataError("target rows must carry a=0 in ratio mode" + at);
        if (std::isnan(d.y[i]) || !std::isfinite(d.y[i])) throw DataError("missing outcome on target row in ratio mode" + at);
        if (d.y[i] < 0.0) throw DataError("negative outcome in ratio mode" + at);
      }
    }
  }
  for (int t = 1; t <= d.m; ++t) {
    Eigen::Index n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (d.g[i] == 0 && d.s[i] == t) (d.a[i] == 1 ? n1 : n0)++;
    if (n0 + n1 == 0) throw DataError("trial " + std::to_string(t) + " is empty (trial indices must be dense 1..m)");
    if (n0 == 0) throw DataError("trial " + std::to_string(t) + " lacks a control arm");
    if (n1 == 0) throw DataError("trial " + std::to_string(t) + " lacks a treated arm");
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline double parse_double(const std::string& cell, Eigen::Index lineno, const std::string& col) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse '" + cell + "' in column " + col + " at line " + std::to_string(lineno));
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Schema: header `g,s,a,y,x1..xp`; empty cell = absent; '.' decimal separator.
inline StudyDataset load_csv(const std::string& path, Mode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  auto header = detail::split_csv_line(line);
  const char* fixed[] = {"g", "s", "a", "y"};
  if (header.size() < 5) throw DataError("header must be g,s,a,y,x1..xp");
  for (int j = 0; j < 4; ++j)
    if (header[j] != fixed[j]) throw DataError(std::string("missing required column '") + fixed[j] + "'");
  const Eigen::Index p = static_cast<Eigen::Index>(header.size()) - 4;
  std::vector<std::string> xnames(header.begin() + 4, header.end());
  for (Eigen::Index j = 0; j < p; ++j)
    if (xnames[j] != "x" + std::to_string(j + 1))
      throw DataError("covariate columns must be named x1..xp; found '" + xnames[j] + "'");

  std::vector<Observation> rows;
  Eigen::Index lineno = 1;
  bool warned_target_y = false;
  std::vector<std::string> warnings;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != p + 4)
      throw DataError("expected " + std::to_string(p + 4) + " cells at line " + std::to_string(lineno));
    Observation o;
    o.g = static_cast<int>(detail::parse_double(cells[0], lineno, "g"));
    if (!cells[1].empty()) o.s = static_cast<int>(detail::parse_double(cells[1], lineno, "s"));
    if (!cells[2].empty()) o.a = static_cast<int>(detail::parse_double(cells[2], lineno, "a"));
    if (!cells[3].empty()) o.y = detail::parse_double(cells[3], lineno, "y");
    o.x.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (cells[4 + j].empty()) throw DataError("missing covariate x" + std::to_string(j + 1) + " at line " + std::to_string(lineno));
      o.x[j] = detail::parse_double(cells[4 + j], lineno, xnames[j]);
    }
    if (mode == Mode::difference && o.g == 1 && o.has_y()) {
      if (!warned_target_y) {
        warnings.push_back("outcome values on target rows are ignored in difference mode (first at line " +
                           std::to_string(lineno) + ")");
        warned_target_y = true;
      }
      o.y = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(std::move(o));
  }
  if (rows.empty()) throw DataError("no data rows in " + path);

  StudyDataset d;
  d.mode = mode;
  d.xnames = xnames;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  d.g.resize(n);
  d.s.resize(n);
  d.a.resize(n);
  d.y.resize(n);
  d.x.resize(n, p);
  int m = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    d.g[i] = rows[i].g;
    d.s[i] = rows[i].s;
    d.a[i] = rows[i].a;
    d.y[i] = rows[i].y;
    d.x.row(i) = rows[i].x.transpose();
    m = std::max(m, rows[i].s);
  }
  d.m = m;
  d.warnings = std::move(warnings);
  validate(d);
  return d;
}

inline void write_csv(const StudyDataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << "g,s,a,y";
  for (Eigen::Index j = 0; j < d.p(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out << d.g[i] << ",";
    if (d.s[i] > 0) out << d.s[i];
    out << ",";
    if (d.a[i] >= 0) out << d.a[i];
    out << ",";
    if (!std::isnan(d.y[i])) out << detail::format_double(d.y[i]);
    for (Eigen::Index j = 0; j < d.p(); ++j) out << "," << detail::format_double(d.x(i, j));
    out << "\n";
  }
}

}  // namespace transport
