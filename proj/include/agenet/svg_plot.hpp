#pragma once

// Minimal static line chart written as SVG.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace agenet {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label = "epoch";
  std::string y_label = "loss";
  int width = 640;
  int height = 400;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline void write_line_chart(std::ostream& os, const std::vector<Series>& series, const ChartOptions& opt = {}) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.label + "': x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double left = 70, right = opt.width - 20.0, top = 40, bottom = opt.height - 50.0;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    os << "<text x=\"" << opt.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::xml_escape(opt.title)
       << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<text x=\"" << detail::num(px(xv)) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">" << detail::tick(xv)
       << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << detail::num(py(yv) + 4) << "\" text-anchor=\"end\">" << detail::tick(yv)
       << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << detail::num(py(yv)) << "\" x2=\"" << right << "\" y2=\"" << detail::num(py(yv))
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << (left + right) / 2 << "\" y=\"" << opt.height - 12 << "\" text-anchor=\"middle\">"
     << detail::xml_escape(opt.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (top + bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (top + bottom) / 2 << ")\">" << detail::xml_escape(opt.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    os << "<polyline class=\"series\" data-label=\"" << detail::xml_escape(s.label) << "\" fill=\"none\" stroke=\""
       << detail::xml_escape(s.color) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << detail::num(px(s.x[i])) << ',' << detail::num(py(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << right - 110 << "\" y1=\"" << ly - 4 << "\" x2=\"" << right - 90 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << detail::xml_escape(s.color) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << right - 85 << "\" y=\"" << ly << "\">" << detail::xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace agenet
