#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dagh/attention.hpp"

namespace dagh {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  /// draw markers only, no connecting line
  bool scatter = false;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// y axis is fixed to [0, 1]
  bool unit_y = true;
};

/// Self-contained SVG line chart. Output depends only on the inputs.
std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series);

/// 8-bit grayscale PNG of a map with values in [0, 1] (clamped).
void write_gray_png(const std::filesystem::path& path, const AttentionMap<float>& map);

}  // namespace dagh
