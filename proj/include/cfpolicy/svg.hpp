#pragma once

#include <string>
#include <vector>

namespace cfpolicy {

struct ChartSeries {
  std::string name;
  std::vector<double> y;  // plotted against 0, 1, 2, ...
  bool dashed = false;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
  int width = 720;
  int height = 400;
};

// Standalone SVG document. Non-finite points break the line.
std::string render_svg(const LineChart& chart);

// Several charts stacked vertically in one document.
std::string render_svg(const std::vector<LineChart>& charts);

}  // namespace cfpolicy
