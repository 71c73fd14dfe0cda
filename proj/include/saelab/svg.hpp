#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "saelab/common.hpp"

namespace saelab {

// One plotted data series: points, an optional connecting line, and optional
// symmetric vertical error bars.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> y_err;  // empty, or one entry per point
  bool line = true;
  bool points = true;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool diagonal = false;  // dashed y=x reference, for ROC panels
  bool log_x = false;
};

namespace detail {

inline std::string svg_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string svg_px(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

inline const char* svg_color(size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

struct AxisRange {
  double lo = 0.0, hi = 1.0;
  double place(double v, double a, double b) const {  // data -> pixel
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

inline AxisRange pad_range(double lo, double hi) {
  if (!(lo < hi)) {
    const double step = std::max(1.0, std::abs(lo) * 0.05);
    return {lo - step, hi + step};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

// One panel drawn at origin; the caller translates it into place.
inline std::string render_panel(const Panel& panel, double W, double H) {
  const double L = 58, R = 14, T = 30, B = 44;
  const double x0 = L, x1 = W - R, y0 = H - B, y1 = T;  // pixel corners

  bool any_point = false;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  for (const Series& s : panel.series) {
    require(s.x.size() == s.y.size(), "svg: series x/y length mismatch");
    require(s.y_err.empty() || s.y_err.size() == s.y.size(), "svg: error-bar length mismatch");
    for (size_t i = 0; i < s.x.size(); ++i) {
      double vx = s.x[i];
      if (panel.log_x) {
        require(vx > 0, "svg: log axis requires positive x");
        vx = std::log10(vx);
      }
      const double err = s.y_err.empty() ? 0.0 : s.y_err[i];
      if (!std::isfinite(vx) || !std::isfinite(s.y[i]) || !std::isfinite(err)) continue;
      if (!any_point) {
        xmin = xmax = vx;
        ymin = s.y[i] - err;
        ymax = s.y[i] + err;
        any_point = true;
      } else {
        xmin = std::min(xmin, vx);
        xmax = std::max(xmax, vx);
        ymin = std::min(ymin, s.y[i] - err);
        ymax = std::max(ymax, s.y[i] + err);
      }
    }
  }
  require(any_point, "svg: nothing to plot");
  const AxisRange xr = pad_range(xmin, xmax);
  const AxisRange yr = pad_range(ymin, ymax);

  std::string out;
  out += "<rect x=\"0\" y=\"0\" width=\"" + svg_px(W) + "\" height=\"" + svg_px(H) +
         "\" fill=\"#ffffff\"/>\n";

  // Grid and tick labels.
  const int n_ticks = 5;
  auto h_tick = [&](double vx, const std::string& text) {
    const double px = xr.place(vx, x0, x1);
    out += "<line x1=\"" + svg_px(px) + "\" y1=\"" + svg_px(y0) + "\" x2=\"" + svg_px(px) +
           "\" y2=\"" + svg_px(y1) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + svg_px(px) + "\" y=\"" + svg_px(y0 + 14) +
           "\" font-size=\"10\" text-anchor=\"middle\" fill=\"#333333\">" + xml_escape(text) +
           "</text>\n";
  };
  if (panel.log_x) {
    const int klo = static_cast<int>(std::ceil(xr.lo - 1e-9));
    const int khi = static_cast<int>(std::floor(xr.hi + 1e-9));
    for (int k = klo; k <= khi; ++k) h_tick(k, svg_num(std::pow(10.0, k)));
  } else {
    for (int t = 0; t < n_ticks; ++t) {
      const double vx = xr.lo + (xr.hi - xr.lo) * t / (n_ticks - 1);
      h_tick(vx, svg_num(vx));
    }
  }
  for (int t = 0; t < n_ticks; ++t) {
    const double vy = yr.lo + (yr.hi - yr.lo) * t / (n_ticks - 1);
    const double py = yr.place(vy, y0, y1);
    out += "<line x1=\"" + svg_px(x0) + "\" y1=\"" + svg_px(py) + "\" x2=\"" + svg_px(x1) +
           "\" y2=\"" + svg_px(py) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + svg_px(x0 - 6) + "\" y=\"" + svg_px(py + 3.5) +
           "\" font-size=\"10\" text-anchor=\"end\" fill=\"#333333\">" +
           xml_escape(svg_num(vy)) + "</text>\n";
  }

  if (panel.diagonal) {
    out += "<line x1=\"" + svg_px(x0) + "\" y1=\"" + svg_px(y0) + "\" x2=\"" + svg_px(x1) +
           "\" y2=\"" + svg_px(y1) +
           "\" stroke=\"#aaaaaa\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (size_t si = 0; si < panel.series.size(); ++si) {
    const Series& s = panel.series[si];
    const char* color = svg_color(si);
    auto place = [&](size_t i, double& px, double& py) {
      const double vx = panel.log_x ? std::log10(s.x[i]) : s.x[i];
      px = xr.place(vx, x0, x1);
      py = yr.place(s.y[i], y0, y1);
      return std::isfinite(px) && std::isfinite(py);
    };
    if (s.line && s.x.size() > 1) {
      std::string pts;
      for (size_t i = 0; i < s.x.size(); ++i) {
        double px, py;
        if (!place(i, px, py)) continue;
        pts += svg_px(px) + "," + svg_px(py) + " ";
      }
      out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"1.6\"/>\n";
    }
    for (size_t i = 0; i < s.y_err.size(); ++i) {
      if (s.y_err[i] <= 0) continue;
      double px, py;
      if (!place(i, px, py)) continue;
      const double lo = yr.place(s.y[i] - s.y_err[i], y0, y1);
      const double hi = yr.place(s.y[i] + s.y_err[i], y0, y1);
      out += "<line x1=\"" + svg_px(px) + "\" y1=\"" + svg_px(lo) + "\" x2=\"" + svg_px(px) +
             "\" y2=\"" + svg_px(hi) + "\" stroke=\"" + color + "\" stroke-width=\"1\"/>\n";
      for (const double e : {lo, hi})
        out += "<line x1=\"" + svg_px(px - 3) + "\" y1=\"" + svg_px(e) + "\" x2=\"" +
               svg_px(px + 3) + "\" y2=\"" + svg_px(e) + "\" stroke=\"" + color +
               "\" stroke-width=\"1\"/>\n";
    }
    if (s.points) {
      for (size_t i = 0; i < s.x.size(); ++i) {
        double px, py;
        if (!place(i, px, py)) continue;
        out += "<circle cx=\"" + svg_px(px) + "\" cy=\"" + svg_px(py) +
               "\" r=\"2.2\" fill=\"" + color + "\"/>\n";
      }
    }
  }

  // Frame, labels, title.
  out += "<rect x=\"" + svg_px(x0) + "\" y=\"" + svg_px(y1) + "\" width=\"" + svg_px(x1 - x0) +
         "\" height=\"" + svg_px(y0 - y1) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  out += "<text x=\"" + svg_px((x0 + x1) / 2) + "\" y=\"" + svg_px(H - 10) +
         "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333333\">" +
         xml_escape(panel.x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"" + svg_px((y0 + y1) / 2) +
         "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 14 " +
         svg_px((y0 + y1) / 2) + ")\">" + xml_escape(panel.y_label) + "</text>\n";
  out += "<text x=\"" + svg_px(W / 2) + "\" y=\"18\" font-size=\"12\" text-anchor=\"middle\" "
         "font-weight=\"bold\" fill=\"#111111\">" + xml_escape(panel.title) + "</text>\n";

  // Legend for labeled series.
  std::vector<std::pair<std::string, const char*>> entries;
  for (size_t si = 0; si < panel.series.size(); ++si)
    if (!panel.series[si].label.empty())
      entries.emplace_back(panel.series[si].label, svg_color(si));
  if (!entries.empty()) {
    size_t longest = 0;
    for (const auto& [label, color] : entries) longest = std::max(longest, label.size());
    const double lw = 30 + 6.4 * static_cast<double>(longest);
    const double lh = 6 + 14 * static_cast<double>(entries.size());
    const double lx = x1 - lw - 6, ly = y1 + 6;
    out += "<rect x=\"" + svg_px(lx) + "\" y=\"" + svg_px(ly) + "\" width=\"" + svg_px(lw) +
           "\" height=\"" + svg_px(lh) +
           "\" fill=\"#ffffff\" fill-opacity=\"0.85\" stroke=\"#cccccc\"/>\n";
    for (size_t e = 0; e < entries.size(); ++e) {
      const double ey = ly + 14 * static_cast<double>(e) + 12;
      out += "<line x1=\"" + svg_px(lx + 5) + "\" y1=\"" + svg_px(ey - 3.5) + "\" x2=\"" +
             svg_px(lx + 21) + "\" y2=\"" + svg_px(ey - 3.5) + "\" stroke=\"" +
             entries[e].second + "\" stroke-width=\"2\"/>\n";
      out += "<text x=\"" + svg_px(lx + 25) + "\" y=\"" + svg_px(ey) +
             "\" font-size=\"10\" fill=\"#333333\">" + xml_escape(entries[e].first) + "</text>\n";
    }
  }
  return out;
}

}  // namespace detail

// Deterministic SVG: identical input structures give identical bytes.
inline std::string render_svg(const std::vector<Panel>& panels, int cols = 2) {
  require(!panels.empty(), "svg: no panels");
  require(cols >= 1, "svg: cols must be positive");
  const double W = 440, H = 330;
  const int n = static_cast<int>(panels.size());
  const int ncols = std::min(cols, n);
  const int nrows = (n + ncols - 1) / ncols;
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    detail::svg_px(W * ncols) + "\" height=\"" + detail::svg_px(H * nrows) +
                    "\" font-family=\"sans-serif\">\n";
  for (int i = 0; i < n; ++i) {
    const int r = i / ncols, c = i % ncols;
    out += "<g transform=\"translate(" + detail::svg_px(W * c) + " " + detail::svg_px(H * r) +
           ")\">\n";
    out += detail::render_panel(panels[static_cast<size_t>(i)], W, H);
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

inline std::string render_svg(const Panel& panel) { return render_svg(std::vector<Panel>{panel}); }

inline void save_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path);
  out << svg;
}

}  // namespace saelab
