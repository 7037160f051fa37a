#pragma once

#include <string>
#include <utility>
#include <vector>

namespace m2at {

struct SvgSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y), plotted in order
};

// Fixed 800x500 line chart: axes, tick labels, one polyline + marker set per
// series, legend on the right. Output is deterministic for identical input.
std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<SvgSeries>& series,
                              double y_min = 0.0, double y_max = 1.0);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace m2at
