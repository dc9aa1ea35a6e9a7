#include "cfpolicy/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace cfpolicy {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr int kLeft = 64;
constexpr int kRight = 150;
constexpr int kTop = 36;
constexpr int kBottom = 44;

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void draw(std::ostringstream& out, const LineChart& chart, int y_offset) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t n = 0;
  for (const auto& s : chart.series) {
    n = std::max(n, s.y.size());
    for (double v : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double pw = chart.width - kLeft - kRight;
  const double ph = chart.height - kTop - kBottom;
  const double xmax = n > 1 ? static_cast<double>(n - 1) : 1.0;
  auto px = [&](double i) { return kLeft + pw * i / xmax; };
  auto py = [&](double v) { return y_offset + kTop + ph * (hi - v) / (hi - lo); };

  out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << chart.width / 2 << "\" y=\"" << y_offset + 20 << "\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(chart.title) << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << y_offset + kTop << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    out << "<line x1=\"" << kLeft << "\" x2=\"" << num(kLeft + pw) << "\" y1=\"" << num(py(v)) << "\" y2=\"" << num(py(v))
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << tick(v) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double i = xmax * k / 4.0;
    out << "<text x=\"" << num(px(i)) << "\" y=\"" << num(y_offset + kTop + ph + 16) << "\" text-anchor=\"middle\">"
        << tick(std::round(i)) << "</text>\n";
  }
  out << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << y_offset + chart.height - 8
      << "\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";
  out << "<text transform=\"translate(14," << num(y_offset + kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(chart.y_label) << "</text>\n";

  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    std::string d;
    bool pen = false;
    for (std::size_t i = 0; i < series.y.size(); ++i) {
      if (!std::isfinite(series.y[i])) {
        pen = false;
        continue;
      }
      d += (pen ? " L" : " M") + num(px(static_cast<double>(i))) + " " + num(py(series.y[i]));
      pen = true;
    }
    out << "<path d=\"" << d << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (series.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    const double ly = y_offset + kTop + 14.0 * static_cast<double>(s) + 6;
    out << "<line x1=\"" << num(kLeft + pw + 10) << "\" x2=\"" << num(kLeft + pw + 30) << "\" y1=\"" << num(ly)
        << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (series.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    out << "<text x=\"" << num(kLeft + pw + 34) << "\" y=\"" << num(ly + 4) << "\">" << escape(series.name)
        << "</text>\n";
  }
  out << "</g>\n";
}

}  // namespace

std::string render_svg(const LineChart& chart) { return render_svg(std::vector<LineChart>{chart}); }

std::string render_svg(const std::vector<LineChart>& charts) {
  int width = 0;
  int height = 0;
  for (const auto& c : charts) {
    width = std::max(width, c.width);
    height += c.height;
  }
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  int y = 0;
  for (const auto& c : charts) {
    draw(out, c, y);
    y += c.height;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace cfpolicy
