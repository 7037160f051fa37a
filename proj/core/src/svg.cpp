#include "m2at/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace m2at {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 62, kRight = 640, kTop = 46, kBottom = 452;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr std::size_t kPaletteLen = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[40];
  if (std::abs(v - std::round(v)) < 1e-9)
    std::snprintf(buf, sizeof buf, "%ld", std::lround(v));
  else
    std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<SvgSeries>& series, double y_min,
                              double y_max) {
  if (series.empty()) throw std::invalid_argument("svg: no series to plot");
  if (!(y_max > y_min)) throw std::invalid_argument("svg: empty y range");

  double x_min = 0, x_max = 1;
  bool have = false;
  std::set<double> xs;
  for (const SvgSeries& s : series)
    for (const auto& [x, y] : s.points) {
      if (!have) {
        x_min = x_max = x;
        have = true;
      } else {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
      }
      xs.insert(x);
    }
  if (!have) throw std::invalid_argument("svg: series hold no points");
  if (x_max == x_min) x_max = x_min + 1;

  const auto px = [&](double x) {
    return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft);
  };
  const auto py = [&](double y) {
    return kBottom - (y - y_min) / (y_max - y_min) * (kBottom - kTop);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
        "viewBox=\"0 0 800 500\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"" << fmt((kLeft + kRight) / 2) << "\" y=\"24\" font-size=\"16\" "
        "font-family=\"sans-serif\" text-anchor=\"middle\">"
     << escape(title) << "</text>\n";

  // frame
  os << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\""
     << fmt(kRight - kLeft) << "\" height=\"" << fmt(kBottom - kTop)
     << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";

  // x ticks: data positions when few, else a uniform grid
  std::vector<double> xticks;
  if (xs.size() <= 10) {
    xticks.assign(xs.begin(), xs.end());
  } else {
    for (int i = 0; i <= 6; ++i) xticks.push_back(x_min + (x_max - x_min) * i / 6.0);
  }
  for (const double t : xticks) {
    const double x = px(t);
    os << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(kBottom) << "\" x2=\"" << fmt(x)
       << "\" y2=\"" << fmt(kBottom + 5) << "\" stroke=\"#333333\"/>\n";
    os << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(kBottom + 20)
       << "\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"middle\">"
       << fmt_tick(t) << "</text>\n";
  }
  // y ticks: 5 divisions with light gridlines
  for (int i = 0; i <= 4; ++i) {
    const double v = y_min + (y_max - y_min) * i / 4.0;
    const double y = py(v);
    os << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(y) << "\" x2=\""
       << fmt(kRight) << "\" y2=\"" << fmt(y)
       << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(y + 4)
       << "\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"end\">"
       << fmt_tick(v) << "</text>\n";
  }

  os << "<text x=\"" << fmt((kLeft + kRight) / 2) << "\" y=\"" << fmt(kHeight - 10)
     << "\" font-size=\"13\" font-family=\"sans-serif\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt((kTop + kBottom) / 2)
     << "\" font-size=\"13\" font-family=\"sans-serif\" text-anchor=\"middle\" "
        "transform=\"rotate(-90 16 "
     << fmt((kTop + kBottom) / 2) << ")\">" << escape(y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % kPaletteLen];
    const SvgSeries& s = series[i];
    if (!s.points.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"2\" points=\"";
      for (std::size_t j = 0; j < s.points.size(); ++j) {
        if (j) os << ' ';
        os << fmt(px(s.points[j].first)) << ',' << fmt(py(s.points[j].second));
      }
      os << "\"/>\n";
      for (const auto& [x, y] : s.points)
        os << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y))
           << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    // legend row
    const double ly = kTop + 10 + 20 * static_cast<double>(i);
    os << "<line x1=\"" << fmt(kRight + 14) << "\" y1=\"" << fmt(ly) << "\" x2=\""
       << fmt(kRight + 38) << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(kRight + 44) << "\" y=\"" << fmt(ly + 4)
       << "\" font-size=\"12\" font-family=\"sans-serif\">" << escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

}  // namespace m2at
