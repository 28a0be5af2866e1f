#include "normlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "normlab/errors.hpp"

namespace normlab {

namespace {
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

void write_svg_lines(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series) {
  if (series.empty()) throw InputError("chart needs at least one series");
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool seen = false;
  for (const SvgSeries& s : series) {
    if (s.x.size() != s.y.size()) {
      throw InputError("series '" + s.label + "' has mismatched x/y lengths");
    }
    if (s.x.empty()) throw InputError("series '" + s.label + "' is empty");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        throw NumericError("series '" + s.label + "' contains a non-finite value");
      }
      if (!seen) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        seen = true;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    }
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.04 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const double width = 800.0, height = 500.0;
  const double left = 72.0, right = width - 24.0, top = 48.0, bottom = height - 56.0;
  const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  const auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write chart '" + path + "'");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"16\">" << xml_escape(title) << "</text>\n";

  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / ticks;
    const double fy = ymin + (ymax - ymin) * i / ticks;
    const double gx = px(fx), gy = py(fy);
    os << "<line x1=\"" << gx << "\" y1=\"" << top << "\" x2=\"" << gx << "\" y2=\"" << bottom
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << gy << "\" x2=\"" << right << "\" y2=\"" << gy
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << gx << "\" y=\"" << bottom + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(fx)
       << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(fy)
       << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
     << bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (left + right) / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (top + bottom) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
     << " transform=\"rotate(-90 16 " << (top + bottom) / 2 << ")\">" << xml_escape(y_label)
     << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const SvgSeries& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) os << ' ';
      os << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    }
    os << "\"/>\n";
    if (s.x.size() == 1) {
      os << "<circle cx=\"" << num(px(s.x[0])) << "\" cy=\"" << num(py(s.y[0]))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 16.0 * static_cast<double>(si);
    os << "<line x1=\"" << right - 150 << "\" y1=\"" << ly << "\" x2=\"" << right - 126
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    os << "<text x=\"" << right - 120 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  os.flush();
  if (!os) throw InputError("failed while writing chart '" + path + "'");
}

}  // namespace normlab
