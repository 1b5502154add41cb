#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "auxdistill/metrics.hpp"

namespace auxdistill {

// Mean and sample standard deviation of one metric across runs, aligned by
// row (update) index. NaN entries are left out of the statistics.
struct Band {
  std::string name;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<int> count;
};

inline Band make_band(const std::vector<MetricsTable>& runs, const std::string& metric) {
  Band b;
  b.name = metric;
  if (runs.empty()) return b;
  std::size_t rows = runs.front().rows.size();
  for (const auto& r : runs) rows = std::min(rows, r.rows.size());
  std::vector<std::vector<double>> xs, ys;
  for (const auto& r : runs) {
    xs.push_back(r.series("env_steps"));
    ys.push_back(r.series(metric));
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double x = 0.0;
    double s = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      x += xs[k][i];
      if (std::isnan(ys[k][i])) continue;
      s += ys[k][i];
      ++n;
    }
    x /= static_cast<double>(runs.size());
    const double m = n > 0 ? s / n : std::nan("");
    double ss = 0.0;
    for (std::size_t k = 0; k < runs.size(); ++k)
      if (!std::isnan(ys[k][i])) ss += (ys[k][i] - m) * (ys[k][i] - m);
    b.x.push_back(x);
    b.mean.push_back(m);
    b.std.push_back(n > 1 ? std::sqrt(ss / (n - 1)) : 0.0);
    b.count.push_back(n);
  }
  return b;
}

namespace detail {

inline constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                     "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Frame {
  double x0 = 70, y0 = 30, w = 620, h = 360;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const { return x0 + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.0) * w; }
  double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.0) * h; }
};

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace detail

// Line chart with one shaded mean +/- std band per series. Empty series
// produce a chart with axes only.
inline void write_svg(std::ostream& os, const std::string& title, const std::vector<Band>& bands,
                      const std::string& ylabel, bool unit_range) {
  detail::Frame f;
  bool any = false;
  double xmax = 0.0, ymin = 0.0, ymax = unit_range ? 1.0 : 0.0;
  for (const auto& b : bands)
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      if (std::isnan(b.mean[i])) continue;
      if (!any && !unit_range) ymin = ymax = b.mean[i];
      any = true;
      xmax = std::max(xmax, b.x[i]);
      if (!unit_range) {
        ymin = std::min(ymin, b.mean[i] - b.std[i]);
        ymax = std::max(ymax, b.mean[i] + b.std[i]);
      }
    }
  if (ymax <= ymin) ymax = ymin + 1.0;
  f.xmax = xmax > 0.0 ? xmax : 1.0;
  f.ymin = ymin;
  f.ymax = ymax;

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"440\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<g class=\"axis\" stroke=\"black\" fill=\"none\"><line x1=\"" << f.x0 << "\" y1=\"" << f.y0 + f.h << "\" x2=\"" << f.x0 + f.w
     << "\" y2=\"" << f.y0 + f.h << "\"/><line x1=\"" << f.x0 << "\" y1=\"" << f.y0 << "\" x2=\"" << f.x0 << "\" y2=\""
     << f.y0 + f.h << "\"/></g>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = f.xmin + (f.xmax - f.xmin) * t / 4.0;
    const double yv = f.ymin + (f.ymax - f.ymin) * t / 4.0;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << f.y0 + f.h + 16 << "\" text-anchor=\"middle\">" << detail::num(xv)
       << "</text>\n";
    os << "<text x=\"" << f.x0 - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">" << detail::num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"" << f.y0 + f.h + 34 << "\" text-anchor=\"middle\">env steps</text>\n";
  os << "<text transform=\"translate(16," << f.y0 + f.h / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
     << "</text>\n";

  for (std::size_t k = 0; k < bands.size(); ++k) {
    const auto& b = bands[k];
    const char* color = detail::kPalette[k % detail::kPalette.size()];
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < b.x.size(); ++i)
      if (!std::isnan(b.mean[i])) idx.push_back(i);
    if (!idx.empty()) {
      os << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i : idx) os << f.px(b.x[i]) << ',' << f.py(b.mean[i] + b.std[i]) << ' ';
      for (auto it = idx.rbegin(); it != idx.rend(); ++it) os << f.px(b.x[*it]) << ',' << f.py(b.mean[*it] - b.std[*it]) << ' ';
      os << "\"/>\n";
      os << "<polyline class=\"mean\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i : idx) os << f.px(b.x[i]) << ',' << f.py(b.mean[i]) << ' ';
      os << "\"/>\n";
    }
    const double ly = f.y0 + 10 + 16 * static_cast<double>(k);
    os << "<line x1=\"" << f.x0 + f.w + 12 << "\" y1=\"" << ly << "\" x2=\"" << f.x0 + f.w + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << f.x0 + f.w + 34 << "\" y=\"" << ly + 4
       << "\">" << b.name << "</text>\n";
  }
  os << "</svg>\n";
}

struct CurveFiles {
  std::filesystem::path success_svg;
  std::filesystem::path losses_svg;
  std::filesystem::path tidy_csv;
};

inline std::vector<std::string> success_metrics() {
  std::vector<std::string> m;
  for (int i = 0; i < kNumTasks; ++i) m.push_back("success_" + std::string(task_name(TaskId{i})));
  m.emplace_back("success_main_easy");
  m.emplace_back("success_main_hard");
  return m;
}

inline std::vector<std::string> loss_metrics() {
  return {"policy_loss", "value_loss", "entropy", "distill_loss", "total_loss"};
}

// Reads every metrics file (all must parse) and writes success.svg,
// losses.svg and curves.csv into `out_dir`.
inline CurveFiles export_curves(const std::vector<std::string>& metrics_files, const std::filesystem::path& out_dir) {
  if (metrics_files.empty()) throw std::invalid_argument("export_curves needs at least one metrics file");
  std::vector<MetricsTable> runs;
  for (const auto& f : metrics_files) {
    try {
      runs.push_back(read_metrics_file(f));
    } catch (const std::exception& e) {
      throw std::runtime_error(f + ": " + e.what());
    }
  }
  std::filesystem::create_directories(out_dir);
  CurveFiles out{out_dir / "success.svg", out_dir / "losses.svg", out_dir / "curves.csv"};

  std::vector<Band> succ, loss;
  for (const auto& m : success_metrics()) succ.push_back(make_band(runs, m));
  for (const auto& m : loss_metrics()) loss.push_back(make_band(runs, m));
  {
    std::ofstream os(out.success_svg);
    write_svg(os, "Success rate by task", succ, "success rate", true);
  }
  {
    std::ofstream os(out.losses_svg);
    write_svg(os, "Losses", loss, "loss", false);
  }
  std::ofstream csv(out.tidy_csv);
  csv << "run,update,env_steps,metric,value\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto upd = runs[k].series("update");
    const auto steps = runs[k].series("env_steps");
    for (const auto& group : {success_metrics(), loss_metrics()})
      for (const auto& m : group) {
        const auto ys = runs[k].series(m);
        for (std::size_t i = 0; i < ys.size(); ++i)
          csv << k << ',' << upd[i] << ',' << steps[i] << ',' << m << ',' << detail::fmt_double(ys[i]) << '\n';
      }
  }
  return out;
}

}  // namespace auxdistill
