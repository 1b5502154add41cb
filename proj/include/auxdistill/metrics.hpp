#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxdistill/ppo.hpp"

namespace auxdistill {

// Column order of the per-update metrics CSV.
inline std::vector<std::string> metrics_columns() {
  std::vector<std::string> cols{"update", "env_steps"};
  for (int i = 0; i < kNumTasks; ++i) cols.push_back("steps_" + std::string(task_name(TaskId{i})));
  for (int i = 0; i < kNumTasks; ++i) cols.push_back("success_" + std::string(task_name(TaskId{i})));
  cols.push_back("success_main_easy");
  cols.push_back("success_main_hard");
  for (int i = 0; i < kNumTasks; ++i) cols.push_back("return_" + std::string(task_name(TaskId{i})));
  for (const char* c : {"policy_loss", "value_loss", "entropy", "distill_loss", "total_loss", "lr", "wall_time"})
    cols.emplace_back(c);
  return cols;
}

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

inline void write_metrics_header(std::ostream& os) {
  const auto cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

inline void write_metrics_row(std::ostream& os, const UpdateMetrics& m) {
  using detail::fmt_double;
  os << m.update << ',' << m.env_steps;
  for (auto s : m.task_steps) os << ',' << s;
  for (double s : m.success) os << ',' << fmt_double(s);
  os << ',' << fmt_double(m.main_easy_success) << ',' << fmt_double(m.main_hard_success);
  for (double r : m.mean_return) os << ',' << fmt_double(r);
  for (double v : {m.policy_loss, m.value_loss, m.entropy, m.distill_loss, m.total_loss, m.lr, m.wall_time})
    os << ',' << fmt_double(v);
  os << '\n';
}

// A parsed metrics CSV: header plus numeric rows.
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw std::out_of_range("no column " + name);
  }

  std::vector<double> series(const std::string& name) const {
    const int c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(c)]);
    return out;
  }
};

// Rejects ragged or non-numeric rows, naming the 1-based line number.
inline MetricsTable read_metrics(std::istream& is) {
  MetricsTable t;
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.columns.empty()) {
      t.columns = std::move(cells);
      continue;
    }
    if (cells.size() != t.columns.size())
      throw std::runtime_error("metrics row " + std::to_string(line_no) + ": expected " +
                               std::to_string(t.columns.size()) + " fields, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      if (c == "nan") {
        row.push_back(std::nan(""));
        continue;
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != c.size() || c.empty())
        throw std::runtime_error("metrics row " + std::to_string(line_no) + ": non-numeric field '" + c + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw std::runtime_error("metrics file has no header");
  return t;
}

inline MetricsTable read_metrics_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_metrics(is);
}

// First x at which y exceeds `threshold`; NaN y values are skipped. Returns -1
// when the threshold is never crossed.
inline double first_crossing(const std::vector<double>& x, const std::vector<double>& y, double threshold) {
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i)
    if (!std::isnan(y[i]) && y[i] > threshold) return x[i];
  return -1.0;
}

}  // namespace auxdistill
