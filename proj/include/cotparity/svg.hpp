#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cotparity {

/// One labelled curve plus optional dashed vertical markers (used for the
/// filter-deactivation epochs).
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> markers;

  void validate() const {
    if (x.size() != y.size()) throw std::invalid_argument("plot series length mismatch");
  }
};

/// Self-contained SVG line chart; no external renderer involved.
inline std::string emit_svg(const std::vector<PlotSeries>& series, const std::string& x_label,
                            const std::string& y_label, const std::string& title,
                            bool log_y = false) {
  if (series.empty()) throw std::invalid_argument("emit_svg: need at least one series");
  for (const auto& s : series) s.validate();

  const int width = 720, height = 440;
  const int ml = 64, mr = 16, mt = 36, mb = 46;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
    for (double v : s.y) {
      const double t = log_y ? std::log10(std::max(v, 1e-12)) : v;
      ymin = std::min(ymin, t);
      ymax = std::max(ymax, t);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad; ymax += ypad;

  auto px = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double v) {
    const double t = log_y ? std::log10(std::max(v, 1e-12)) : v;
    return mt + (1.0 - (t - ymin) / (ymax - ymin)) * ph;
  };

  static const char* palette[] = {"#d62728", "#e8b810", "#1f77b4", "#2ca02c",
                                  "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";
  svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";

  const int nticks = 5;
  for (int i = 0; i <= nticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / nticks;
    svg << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(fx) << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-size=\"11\">" << static_cast<long long>(std::lround(fx))
        << "</text>\n";
    const double ty = ymin + (ymax - ymin) * i / nticks;
    const double vy = mt + (1.0 - static_cast<double>(i) / nticks) * ph;
    std::ostringstream lab;
    if (log_y)
      lab << "1e" << static_cast<int>(std::lround(ty));
    else
      lab << std::round(ty * 1000.0) / 1000.0;
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << vy << "\" x2=\"" << ml << "\" y2=\"" << vy
        << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << vy + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << lab.str() << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " << mt + ph / 2
      << ")\">" << y_label << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      svg << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    svg << "\"/>\n";
    for (double mx : series[s].markers) {
      svg << "<line x1=\"" << px(mx) << "\" y1=\"" << mt << "\" x2=\"" << px(mx) << "\" y2=\""
          << mt + ph << "\" stroke=\"" << color << "\" stroke-dasharray=\"5,4\"/>\n";
    }
    svg << "<text x=\"" << ml + pw - 8 << "\" y=\"" << mt + 16 + 15 * static_cast<double>(s)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << series[s].label
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cotparity
