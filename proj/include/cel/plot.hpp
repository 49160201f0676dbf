#pragma once

// Static SVG figure emission. Charts render from already-emitted CSV data
// so figures are reproducible without re-running experiments.

#include <span>
#include <string>
#include <vector>

#include "cel/array.hpp"

namespace cel::plot {

struct Series {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;  // NaN breaks the line
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      std::span<const Series> series);

struct Bar {
  std::string label;
  double value = 0.0;
  double err = 0.0;  // symmetric error whisker; 0 draws none
};

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::string& y_label, std::span<const Bar> bars);

void write_heatmap(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<std::string>& x_ticks,
                   const std::vector<std::string>& y_ticks, const Mat& values);

}  // namespace cel::plot
