#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sevtrain {

// Self-contained SVG line charts. Each panel plots one or more named series
// over a shared x axis; a file may hold several panels side by side.

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
  // When set, the y axis is fixed to [y_min, y_max] instead of autoscaling.
  bool fixed_y = false;
  double y_min = 0.0;
  double y_max = 1.0;
};

std::string render_chart_svg(const std::vector<ChartPanel>& panels);
void save_chart_svg(const std::filesystem::path& p, const std::vector<ChartPanel>& panels);

}  // namespace sevtrain
