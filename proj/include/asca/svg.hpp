#pragma once

// Minimal static SVG charts for score plots, scree bars and power curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace asca::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

constexpr double kWidth = 480, kHeight = 360, kMargin = 48;

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
  double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

inline Frame frame_for(const std::vector<Series>& series, bool include_zero) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = include_zero ? 0.0 : INFINITY, y1 = include_zero ? 0.0 : -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) {
      if (std::isfinite(v)) x0 = std::min(x0, v), x1 = std::max(x1, v);
    }
    for (double v : s.y) {
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 - x0 <= 0) x0 -= 1, x1 += 1;
  if (y1 - y0 <= 0) y0 -= 1, y1 += 1;
  const double dx = 0.05 * (x1 - x0), dy = 0.05 * (y1 - y0);
  return {x0 - dx, x1 + dx, include_zero && y0 >= 0 ? 0.0 : y0 - dy, y1 + dy};
}

inline void open(std::ostringstream& out, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel, const Frame& f) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
      << "</text>\n";
  out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin << "\" height=\""
      << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"#444\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(xlabel)
      << "</text>\n";
  out << "<text x=\"14\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << kHeight / 2 << ")\">" << escape(ylabel) << "</text>\n";
  for (double v : {f.x0, f.x1}) {
    out << "<text x=\"" << num(f.px(v)) << "\" y=\"" << kHeight - kMargin + 14 << "\" text-anchor=\"middle\">"
        << num(v) << "</text>\n";
  }
  for (double v : {f.y0, f.y1}) {
    out << "<text x=\"" << kMargin - 4 << "\" y=\"" << num(f.py(v)) << "\" text-anchor=\"end\">" << num(v)
        << "</text>\n";
  }
}

inline void legend(std::ostringstream& out, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kMargin + 12 + 14 * static_cast<double>(i);
    out << "<rect x=\"" << kWidth - kMargin + 4 << "\" y=\"" << y - 8 << "\" width=\"8\" height=\"8\" fill=\""
        << color(i) << "\"/><text x=\"" << kWidth - kMargin + 14 << "\" y=\"" << y << "\">" << escape(series[i].label)
        << "</text>\n";
  }
}

}  // namespace detail

inline std::string scatter(const std::vector<Series>& groups, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel) {
  const auto f = detail::frame_for(groups, false);
  std::ostringstream out;
  detail::open(out, title, xlabel, ylabel, f);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].x.size(); ++i) {
      out << "<circle cx=\"" << detail::num(f.px(groups[g].x[i])) << "\" cy=\"" << detail::num(f.py(groups[g].y[i]))
          << "\" r=\"3\" fill=\"" << detail::color(g) << "\"/>\n";
    }
  }
  detail::legend(out, groups);
  out << "</svg>\n";
  return out.str();
}

inline std::string lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                         const std::string& ylabel) {
  const auto f = detail::frame_for(series, true);
  std::ostringstream out;
  detail::open(out, title, xlabel, ylabel, f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << detail::color(s) << "\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) out << ' ';
      out << detail::num(f.px(series[s].x[i])) << ',' << detail::num(f.py(series[s].y[i]));
    }
    out << "\"/>\n";
  }
  detail::legend(out, series);
  out << "</svg>\n";
  return out.str();
}

inline std::string bars(const std::vector<double>& values, const std::string& title, const std::string& xlabel,
                        const std::string& ylabel) {
  Series s{"", {}, values};
  for (std::size_t i = 0; i < values.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
  const auto f = detail::frame_for({s}, true);
  std::ostringstream out;
  detail::open(out, title, xlabel, ylabel, f);
  const double width = 0.6 * (f.px(2.0) - f.px(1.0));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double top = f.py(std::max(0.0, values[i]));
    out << "<rect x=\"" << detail::num(f.px(s.x[i]) - width / 2) << "\" y=\"" << detail::num(top) << "\" width=\""
        << detail::num(width) << "\" height=\"" << detail::num(f.py(0.0) - top) << "\" fill=\"" << detail::color(0)
        << "\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace asca::svg
