#include "cel/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cel::plot {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void widen(double x) {
    if (!std::isfinite(x)) return;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
};

Range span_of(std::span<const Series> series, bool use_x) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& s : series)
    for (double v : (use_x ? s.xs : s.ys))
      if (std::isfinite(v)) {
        r.lo = std::min(r.lo, v);
        r.hi = std::max(r.hi, v);
      }
  if (!std::isfinite(r.lo)) return {0.0, 1.0};
  if (r.lo == r.hi) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

struct Canvas {
  std::ostringstream body;

  void open(const std::string& title) {
    body << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
         << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    body << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    body << "<text x=\"" << kWidth / 2 << "\" y=\"28\" font-size=\"18\" text-anchor=\"middle\" "
            "font-family=\"sans-serif\">"
         << esc(title) << "</text>\n";
  }

  void axes(const std::string& x_label, const std::string& y_label) {
    body << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
         << kWidth - kRight << "\" y2=\"" << kHeight - kBottom
         << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    body << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
         << kHeight - kBottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    body << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 15
         << "\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">"
         << esc(x_label) << "</text>\n";
    body << "<text x=\"18\" y=\"" << (kTop + kHeight - kBottom) / 2
         << "\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            "transform=\"rotate(-90 18 "
         << (kTop + kHeight - kBottom) / 2 << ")\">" << esc(y_label) << "</text>\n";
  }

  void save(const std::string& path) {
    body << "</svg>\n";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write figure: " + path);
    out << body.str();
    if (!out) throw std::runtime_error("short write on figure: " + path);
  }
};

double sx(double x, const Range& r) {
  return kLeft + (x - r.lo) / (r.hi - r.lo) * (kWidth - kLeft - kRight);
}
double sy(double y, const Range& r) {
  return kHeight - kBottom - (y - r.lo) / (r.hi - r.lo) * (kHeight - kTop - kBottom);
}

void ticks(Canvas& c, const Range& xr, const Range& yr) {
  for (int i = 0; i <= 5; ++i) {
    double fx = xr.lo + (xr.hi - xr.lo) * i / 5.0;
    double px = sx(fx, xr);
    c.body << "<line x1=\"" << num(px) << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << num(px)
           << "\" y2=\"" << kHeight - kBottom + 5 << "\" stroke=\"black\"/>\n";
    c.body << "<text x=\"" << num(px) << "\" y=\"" << kHeight - kBottom + 20
           << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" << num(fx)
           << "</text>\n";
    double fy = yr.lo + (yr.hi - yr.lo) * i / 5.0;
    double py = sy(fy, yr);
    c.body << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << num(py) << "\" x2=\"" << kLeft
           << "\" y2=\"" << num(py) << "\" stroke=\"black\"/>\n";
    c.body << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(py + 4)
           << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">" << num(fy)
           << "</text>\n";
  }
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      std::span<const Series> series) {
  Canvas c;
  c.open(title);
  Range xr = span_of(series, true);
  Range yr = span_of(series, false);
  c.axes(x_label, y_label);
  ticks(c, xr, yr);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    std::ostringstream pts;
    bool in_segment = false;
    auto flush = [&]() {
      if (in_segment) {
        c.body << "<polyline fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
        pts.str("");
        in_segment = false;
      }
    };
    for (std::size_t i = 0; i < ser.xs.size() && i < ser.ys.size(); ++i) {
      if (!std::isfinite(ser.xs[i]) || !std::isfinite(ser.ys[i])) {
        flush();
        continue;
      }
      pts << num(sx(ser.xs[i], xr)) << ',' << num(sy(ser.ys[i], yr)) << ' ';
      in_segment = true;
    }
    flush();
    double ly = kTop + 16.0 * static_cast<double>(s);
    c.body << "<line x1=\"" << kWidth - kRight - 150 << "\" y1=\"" << num(ly) << "\" x2=\""
           << kWidth - kRight - 130 << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
    c.body << "<text x=\"" << kWidth - kRight - 125 << "\" y=\"" << num(ly + 4)
           << "\" font-size=\"11\" font-family=\"sans-serif\">" << esc(ser.name) << "</text>\n";
  }
  c.save(path);
}

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::string& y_label, std::span<const Bar> bars) {
  Canvas c;
  c.open(title);
  Range yr{0.0, 0.0};
  for (const auto& b : bars) {
    yr.widen(b.value + b.err);
    yr.widen(b.value - b.err);
  }
  if (yr.hi == yr.lo) yr.hi = yr.lo + 1.0;
  c.axes("", y_label);
  Range xr{0.0, static_cast<double>(bars.size())};
  ticks(c, xr, yr);
  const double plot_w = kWidth - kLeft - kRight;
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    double x0 = kLeft + slot * (static_cast<double>(i) + 0.2);
    double w = slot * 0.6;
    double y0 = sy(std::max(b.value, 0.0), yr);
    double y1 = sy(std::min(b.value, 0.0), yr);
    c.body << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(w)
           << "\" height=\"" << num(std::max(1.0, y1 - y0)) << "\" fill=\"" << color << "\"/>\n";
    if (b.err > 0) {
      double cx = x0 + w / 2;
      c.body << "<line x1=\"" << num(cx) << "\" y1=\"" << num(sy(b.value - b.err, yr))
             << "\" x2=\"" << num(cx) << "\" y2=\"" << num(sy(b.value + b.err, yr))
             << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
    c.body << "<text x=\"" << num(x0 + w / 2) << "\" y=\"" << kHeight - kBottom + 20
           << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << esc(b.label) << "</text>\n";
  }
  c.save(path);
}

void write_heatmap(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<std::string>& x_ticks,
                   const std::vector<std::string>& y_ticks, const Mat& values) {
  if (values.rows != y_ticks.size() || values.cols != x_ticks.size())
    throw std::invalid_argument("heatmap: tick labels do not match value grid");
  Canvas c;
  c.open(title);
  c.axes(x_label, y_label);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values.v)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    lo = 0;
    hi = 1;
  }
  if (lo == hi) hi = lo + 1;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double cw = plot_w / static_cast<double>(values.cols);
  const double ch = plot_h / static_cast<double>(values.rows);
  for (std::size_t i = 0; i < values.rows; ++i) {
    for (std::size_t j = 0; j < values.cols; ++j) {
      double v = values.at(i, j);
      std::string fill;
      if (!std::isfinite(v)) {
        fill = "#cccccc";
      } else {
        double t = (v - lo) / (hi - lo);
        int r = static_cast<int>(255 * t);
        int b = static_cast<int>(255 * (1 - t));
        char buf[16];
        std::snprintf(buf, sizeof(buf), "#%02x40%02x", r, b);
        fill = buf;
      }
      double x0 = kLeft + cw * static_cast<double>(j);
      double y0 = kTop + ch * static_cast<double>(values.rows - 1 - i);
      c.body << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(cw)
             << "\" height=\"" << num(ch) << "\" fill=\"" << fill
             << "\" stroke=\"white\" stroke-width=\"0.5\"/>\n";
      if (std::isfinite(v)) {
        c.body << "<text x=\"" << num(x0 + cw / 2) << "\" y=\"" << num(y0 + ch / 2 + 4)
               << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                  "fill=\"white\">"
               << num(v) << "</text>\n";
      }
    }
  }
  for (std::size_t j = 0; j < x_ticks.size(); ++j) {
    c.body << "<text x=\"" << num(kLeft + cw * (static_cast<double>(j) + 0.5)) << "\" y=\""
           << kHeight - kBottom + 20
           << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << esc(x_ticks[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < y_ticks.size(); ++i) {
    c.body << "<text x=\"" << kLeft - 8 << "\" y=\""
           << num(kTop + ch * (static_cast<double>(values.rows - 1 - i) + 0.5) + 4)
           << "\" font-size=\"12\" text-anchor=\"end\" font-family=\"sans-serif\">"
           << esc(y_ticks[i]) << "</text>\n";
  }
  c.save(path);
}

}  // namespace cel::plot
