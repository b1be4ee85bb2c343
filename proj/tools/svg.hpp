#pragma once

// Hand-emitted SVG line plots. Only polylines, a frame and text.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/io.hpp"

namespace hodgeflow::svg {

struct Polyline {
  std::vector<std::pair<double, double>> points;
  std::string label;
};

struct Panel {
  std::string title;
  std::vector<Polyline> lines;
  /// Draw an equilateral triangle frame (barycentric coordinates) instead of a box.
  bool triangle = false;
  std::string x_label;
  std::string y_label;
};

inline const char* color(std::size_t i) {
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};
  return palette[i % 8];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Barycentric (p0, p1, p2) to the plane, vertices at (0,0), (1,0), (1/2, sqrt(3)/2).
inline std::pair<double, double> barycentric(double p0, double p1, double p2) {
  (void)p0;
  return {p1 + 0.5 * p2, 0.5 * std::sqrt(3.0) * p2};
}

/// Keeps at most `cap` points, always including the last.
inline std::vector<std::pair<double, double>> thin(const std::vector<std::pair<double, double>>& pts, std::size_t cap) {
  if (pts.size() <= cap) return pts;
  std::vector<std::pair<double, double>> out;
  const double stride = static_cast<double>(pts.size() - 1) / static_cast<double>(cap - 1);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(pts[static_cast<std::size_t>(std::llround(stride * static_cast<double>(i)))]);
  return out;
}

inline std::string render(const std::vector<Panel>& panels, const std::string& title) {
  const double pw = 420, ph = 420, margin = 40, top = 50;
  const double width = margin + static_cast<double>(panels.size()) * (pw + margin);
  const double height = top + ph + 2 * margin;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(margin) + "\" y=\"24\" font-size=\"16\">" + title + "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double ox = margin + static_cast<double>(p) * (pw + margin);
    const double oy = top;
    double xmin, xmax, ymin, ymax;
    if (panel.triangle) {
      xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    } else {
      xmin = ymin = std::numeric_limits<double>::infinity();
      xmax = ymax = -std::numeric_limits<double>::infinity();
      for (const auto& l : panel.lines) {
        for (auto [x, y] : l.points) {
          if (!std::isfinite(x) || !std::isfinite(y)) continue;
          xmin = std::min(xmin, x), xmax = std::max(xmax, x);
          ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        }
      }
      if (!std::isfinite(xmin)) xmin = ymin = -1, xmax = ymax = 1;
      // square aspect with a small pad
      const double span = std::max({xmax - xmin, ymax - ymin, 1e-9}) * 1.1;
      const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
      xmin = cx - span / 2, xmax = cx + span / 2, ymin = cy - span / 2, ymax = cy + span / 2;
    }
    auto X = [&](double x) { return ox + (x - xmin) / (xmax - xmin) * pw; };
    auto Y = [&](double y) { return oy + ph - (y - ymin) / (ymax - ymin) * ph; };

    s += "<text x=\"" + num(ox) + "\" y=\"" + num(oy - 8) + "\">" + panel.title + "</text>\n";
    if (panel.triangle) {
      const auto [ax, ay] = barycentric(1, 0, 0);
      const auto [bx, by] = barycentric(0, 1, 0);
      const auto [cx, cy] = barycentric(0, 0, 1);
      s += "<polygon fill=\"none\" stroke=\"#444\" points=\"" + num(X(ax)) + "," + num(Y(ay)) + " " + num(X(bx)) + "," +
           num(Y(by)) + " " + num(X(cx)) + "," + num(Y(cy)) + "\"/>\n";
      s += "<text x=\"" + num(X(ax) - 10) + "\" y=\"" + num(Y(ay) + 16) + "\">a0</text>\n";
      s += "<text x=\"" + num(X(bx) - 10) + "\" y=\"" + num(Y(by) + 16) + "\">a1</text>\n";
      s += "<text x=\"" + num(X(cx) - 8) + "\" y=\"" + num(Y(cy) - 6) + "\">a2</text>\n";
    } else {
      s += "<rect x=\"" + num(ox) + "\" y=\"" + num(oy) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";
      s += "<text x=\"" + num(ox) + "\" y=\"" + num(oy + ph + 16) + "\">" + num(xmin) + "</text>\n";
      s += "<text x=\"" + num(ox + pw - 40) + "\" y=\"" + num(oy + ph + 16) + "\">" + num(xmax) + "</text>\n";
      s += "<text x=\"" + num(ox + pw / 2 - 20) + "\" y=\"" + num(oy + ph + 30) + "\">" + panel.x_label + "</text>\n";
      s += "<text x=\"" + num(ox - 34) + "\" y=\"" + num(oy + ph) + "\">" + num(ymin) + "</text>\n";
      s += "<text x=\"" + num(ox - 34) + "\" y=\"" + num(oy + 10) + "\">" + num(ymax) + "</text>\n";
      s += "<text x=\"" + num(ox - 34) + "\" y=\"" + num(oy + ph / 2) + "\">" + panel.y_label + "</text>\n";
    }
    for (std::size_t l = 0; l < panel.lines.size(); ++l) {
      const auto pts = thin(panel.lines[l].points, 2000);
      if (pts.empty()) continue;
      s += "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" + std::string(color(l)) + "\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + num(X(pts[i].first)) + "," + num(Y(pts[i].second));
      s += "\"/>\n";
      // start marker
      s += "<circle r=\"3\" fill=\"" + std::string(color(l)) + "\" cx=\"" + num(X(pts.front().first)) + "\" cy=\"" +
           num(Y(pts.front().second)) + "\"/>\n";
      s += "<text fill=\"" + std::string(color(l)) + "\" x=\"" + num(ox + pw - 90) + "\" y=\"" +
           num(oy + 16 + 14 * static_cast<double>(l)) + "\">" + panel.lines[l].label + "</text>\n";
    }
  }
  s += "</svg>\n";
  return s;
}

inline void write(const std::filesystem::path& path, const std::vector<Panel>& panels, const std::string& title) {
  auto out = io::open_for_write(path);
  out << render(panels, title);
  if (!out) throw io::IoError("write failed: " + path.string());
}

}  // namespace hodgeflow::svg
