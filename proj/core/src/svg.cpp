#include "sevtrain/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "sevtrain/util.hpp"

namespace sevtrain {

namespace {

constexpr int kPanelW = 420;
constexpr int kPanelH = 320;
constexpr int kMarginL = 56;
constexpr int kMarginR = 16;
constexpr int kMarginT = 34;
constexpr int kMarginB = 44;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string esc(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void render_panel(std::ostringstream& os, const ChartPanel& panel, int x_off) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& s : panel.series) {
    for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
    for (double v : s.y) {
      if (std::isfinite(v)) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    }
  }
  if (!std::isfinite(xmin)) { xmin = 0; xmax = 1; }
  if (!std::isfinite(ymin)) { ymin = 0; ymax = 1; }
  if (panel.fixed_y) { ymin = panel.y_min; ymax = panel.y_max; }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;

  const double plot_w = kPanelW - kMarginL - kMarginR;
  const double plot_h = kPanelH - kMarginT - kMarginB;
  auto px = [&](double v) { return x_off + kMarginL + (v - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double v) { return kMarginT + (1.0 - (v - ymin) / (ymax - ymin)) * plot_h; };

  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect x=\"" << x_off + kMarginL << "\" y=\"" << kMarginT << "\" width=\"" << num(plot_w)
     << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"#444444\"/>\n";
  os << "<text x=\"" << x_off + kPanelW / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
     << esc(panel.title) << "</text>\n";

  const int n_ticks = 5;
  for (int i = 0; i <= n_ticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / n_ticks;
    const double fy = ymin + (ymax - ymin) * i / n_ticks;
    os << "<line x1=\"" << num(px(fx)) << "\" y1=\"" << num(kMarginT + plot_h) << "\" x2=\""
       << num(px(fx)) << "\" y2=\"" << num(kMarginT + plot_h + 4) << "\" stroke=\"#444444\"/>\n";
    os << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(kMarginT + plot_h + 16)
       << "\" text-anchor=\"middle\">" << tick_label(fx) << "</text>\n";
    os << "<line x1=\"" << x_off + kMarginL - 4 << "\" y1=\"" << num(py(fy)) << "\" x2=\""
       << x_off + kMarginL << "\" y2=\"" << num(py(fy)) << "\" stroke=\"#444444\"/>\n";
    os << "<text x=\"" << x_off + kMarginL - 7 << "\" y=\"" << num(py(fy) + 4)
       << "\" text-anchor=\"end\">" << tick_label(fy) << "</text>\n";
  }
  os << "<text x=\"" << x_off + kMarginL + plot_w / 2 << "\" y=\"" << kPanelH - 8
     << "\" text-anchor=\"middle\">" << esc(panel.x_label) << "</text>\n";
  os << "<text x=\"" << x_off + 14 << "\" y=\"" << kMarginT + plot_h / 2
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 " << x_off + 14 << " "
     << kMarginT + plot_h / 2 << ")\">" << esc(panel.y_label) << "</text>\n";

  for (std::size_t si = 0; si < panel.series.size(); ++si) {
    const auto& s = panel.series[si];
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;  // absent metric: gap in the line
      if (!points.empty()) points += ' ';
      points += num(px(s.x[i])) + "," + num(py(s.y[i]));
    }
    os << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.6\"/>\n";
    // legend
    const double ly = kMarginT + 10 + 14.0 * static_cast<double>(si);
    os << "<line x1=\"" << x_off + kMarginL + 8 << "\" y1=\"" << num(ly) << "\" x2=\""
       << x_off + kMarginL + 26 << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
       << "\" stroke-width=\"1.6\"/>\n";
    os << "<text x=\"" << x_off + kMarginL + 30 << "\" y=\"" << num(ly + 4) << "\">"
       << esc(s.name) << "</text>\n";
  }
  os << "</g>\n";
}

}  // namespace

std::string render_chart_svg(const std::vector<ChartPanel>& panels) {
  const int total_w = kPanelW * std::max<std::size_t>(1, panels.size());
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w << "\" height=\""
     << kPanelH << "\" viewBox=\"0 0 " << total_w << " " << kPanelH << "\">\n";
  os << "<rect width=\"" << total_w << "\" height=\"" << kPanelH << "\" fill=\"#ffffff\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    render_panel(os, panels[i], static_cast<int>(i) * kPanelW);
  }
  os << "</svg>\n";
  return os.str();
}

void save_chart_svg(const std::filesystem::path& p, const std::vector<ChartPanel>& panels) {
  write_text_file(p, render_chart_svg(panels));
}

}  // namespace sevtrain
