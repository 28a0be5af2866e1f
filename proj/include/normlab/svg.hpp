#pragma once

#include <string>
#include <vector>

namespace normlab {

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Self-contained multi-series line chart with axes, tick labels and a
// legend.  Series with mismatched x/y lengths or no points are rejected.
void write_svg_lines(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series);

}  // namespace normlab
