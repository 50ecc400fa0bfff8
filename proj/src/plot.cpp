#include "defletter/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "defletter/util.hpp"

namespace defletter::plot {
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

std::string color(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

const char* anchor_name(Anchor a) {
  switch (a) {
    case Anchor::Start: return "start";
    case Anchor::Middle: return "middle";
    case Anchor::End: return "end";
  }
  return "start";
}

int px(double v) { return static_cast<int>(std::lround(v)); }

void fill_polygon(Canvas& c, const std::vector<std::pair<double, double>>& pts, Rgb fill) {
  if (pts.size() < 3) return;
  double ymin = pts[0].second, ymax = ymin;
  for (auto [x, y] : pts) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  for (int y = std::max(0, px(ymin)); y <= std::min(c.height() - 1, px(ymax)); ++y) {
    const double sy = y + 0.5;
    std::vector<double> xs;
    for (size_t i = 0; i < pts.size(); ++i) {
      auto [x0, y0] = pts[i];
      auto [x1, y1] = pts[(i + 1) % pts.size()];
      if ((y0 <= sy) != (y1 <= sy)) xs.push_back(x0 + (sy - y0) * (x1 - x0) / (y1 - y0));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2)
      for (int x = std::max(0, px(xs[i])); x < std::min(c.width(), px(xs[i + 1])); ++x) c.set(x, y, fill);
  }
}

}  // namespace

std::string Figure::to_svg(const std::string& comment) const {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_
      << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\" font-family=\"sans-serif\">\n";
  if (!comment.empty()) {
    std::string safe = comment;
    for (size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- -");
    out << "<!-- " << safe << " -->\n";
  }
  out << "<rect width=\"" << width_ << "\" height=\"" << height_ << "\" fill=\"#ffffff\"/>\n";
  for (const auto& shape : shapes_) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Rect>) {
            out << "<rect x=\"" << num(s.x) << "\" y=\"" << num(s.y) << "\" width=\"" << num(s.w) << "\" height=\""
                << num(s.h) << "\" fill=\"" << color(s.fill) << '"';
            if (s.stroke) out << " stroke=\"" << color(*s.stroke) << '"';
            out << "/>\n";
          } else if constexpr (std::is_same_v<T, Line>) {
            out << "<line x1=\"" << num(s.x0) << "\" y1=\"" << num(s.y0) << "\" x2=\"" << num(s.x1) << "\" y2=\""
                << num(s.y1) << "\" stroke=\"" << color(s.color) << "\" stroke-width=\"" << num(s.width) << "\"/>\n";
          } else if constexpr (std::is_same_v<T, Text>) {
            out << "<text x=\"" << num(s.x) << "\" y=\"" << num(s.y) << "\" font-size=\"" << num(s.size)
                << "\" fill=\"" << color(s.color) << "\" text-anchor=\"" << anchor_name(s.anchor) << "\">"
                << escape(s.text) << "</text>\n";
          } else if constexpr (std::is_same_v<T, Polygon>) {
            out << "<polygon points=\"";
            for (size_t i = 0; i < s.points.size(); ++i)
              out << (i ? " " : "") << num(s.points[i].first) << ',' << num(s.points[i].second);
            out << "\" fill=\"" << color(s.fill) << '"';
            if (s.stroke) out << " stroke=\"" << color(*s.stroke) << '"';
            out << "/>\n";
          } else if constexpr (std::is_same_v<T, Circle>) {
            out << "<circle cx=\"" << num(s.x) << "\" cy=\"" << num(s.y) << "\" r=\"" << num(s.r) << "\" fill=\""
                << color(s.fill) << "\"/>\n";
          } else if constexpr (std::is_same_v<T, Glyph>) {
            // Ink pixels as a run-length encoded path keeps the file small.
            out << "<path fill=\"#000000\" d=\"";
            for (int y = 0; y < kCanvas; ++y) {
              for (int x = 0; x < kCanvas;) {
                if (s.image.at(y, x) <= 0) {
                  ++x;
                  continue;
                }
                int run = x;
                while (run < kCanvas && s.image.at(y, run) > 0) ++run;
                out << 'M' << num(s.x + x * s.scale) << ' ' << num(s.y + y * s.scale) << 'h' << (run - x) * s.scale
                    << 'v' << s.scale << 'h' << -(run - x) * s.scale << 'z';
                x = run;
              }
            }
            out << "\"/>\n";
            out << "<rect x=\"" << num(s.x) << "\" y=\"" << num(s.y) << "\" width=\"" << kCanvas * s.scale
                << "\" height=\"" << kCanvas * s.scale << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
          }
        },
        shape);
  }
  out << "</svg>\n";
  return out.str();
}

Canvas Figure::to_canvas() const {
  Canvas c(width_, height_);
  for (const auto& shape : shapes_) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Rect>) {
            c.fill_rect(px(s.x), px(s.y), std::max(1, px(s.x + s.w) - px(s.x)), std::max(1, px(s.y + s.h) - px(s.y)),
                        s.fill);
            if (s.stroke) c.rect_outline(px(s.x), px(s.y), px(s.w), px(s.h), *s.stroke);
          } else if constexpr (std::is_same_v<T, Line>) {
            c.line(px(s.x0), px(s.y0), px(s.x1), px(s.y1), s.color);
          } else if constexpr (std::is_same_v<T, Text>) {
            std::string upper = s.text;
            for (char& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            const int scale = std::max(1, px(s.size / 10.0));
            const int w = static_cast<int>(upper.size()) * 6 * scale;
            int x = px(s.x);
            if (s.anchor == Anchor::Middle) x -= w / 2;
            if (s.anchor == Anchor::End) x -= w;
            c.text(x, px(s.y) - 7 * scale, upper, s.color, scale);
          } else if constexpr (std::is_same_v<T, Polygon>) {
            fill_polygon(c, s.points, s.fill);
            if (s.stroke)
              for (size_t i = 0; i < s.points.size(); ++i) {
                auto a = s.points[i], b = s.points[(i + 1) % s.points.size()];
                c.line(px(a.first), px(a.second), px(b.first), px(b.second), *s.stroke);
              }
          } else if constexpr (std::is_same_v<T, Circle>) {
            for (int y = px(s.y - s.r); y <= px(s.y + s.r); ++y)
              for (int x = px(s.x - s.r); x <= px(s.x + s.r); ++x)
                if ((x - s.x) * (x - s.x) + (y - s.y) * (y - s.y) <= s.r * s.r) c.set(x, y, s.fill);
          } else if constexpr (std::is_same_v<T, Glyph>) {
            c.glyph(px(s.x), px(s.y), s.image, s.scale);
          }
        },
        shape);
  }
  return c;
}

void Figure::save(const std::filesystem::path& stem, const std::string& provenance) const {
  auto svg = stem;
  svg += ".svg";
  auto png = stem;
  png += ".png";
  write_text(svg, to_svg(provenance));
  std::map<std::string, std::string> text;
  if (!provenance.empty()) text["provenance"] = provenance;
  write_png(png, to_canvas(), text);
}

Figure heatmap(const HeatmapData& data) {
  const double cell = 22, left = 40, top = 50;
  const size_t rows = data.values.size();
  const size_t cols = rows ? data.values[0].size() : 0;
  const int width = static_cast<int>(left + cell * static_cast<double>(cols) + 90);
  const int height = static_cast<int>(top + cell * static_cast<double>(rows) + 20);
  Figure fig(width, height);
  fig.add(Text{left, 20, data.title, 14});

  double vmax = 0;
  for (const auto& row : data.values)
    for (double v : row)
      if (std::isfinite(v)) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1;

  for (size_t c = 0; c < cols && c < data.col_labels.size(); ++c)
    fig.add(Text{left + cell * (static_cast<double>(c) + 0.5), top - 6, data.col_labels[c], 10, kBlack, Anchor::Middle});
  for (size_t r = 0; r < rows; ++r) {
    const double y = top + cell * static_cast<double>(r);
    if (r < data.row_labels.size()) fig.add(Text{left - 6, y + cell * 0.7, data.row_labels[r], 10, kBlack, Anchor::End});
    for (size_t c = 0; c < cols; ++c) {
      const double x = left + cell * static_cast<double>(c);
      const double v = data.values[r][c];
      if (!std::isfinite(v)) {
        fig.add(Rect{x, y, cell, cell, kWhite, kGrid});
        continue;
      }
      const double t = v / vmax;
      fig.add(Rect{x, y, cell, cell, heat_color(t), kGrid});
      if (data.annotate && v != 0) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.*f", data.decimals, v);
        fig.add(Text{x + cell / 2, y + cell * 0.65, buf, 7, t > 0.6 ? kWhite : kBlack, Anchor::Middle});
      }
    }
  }
  // Colour bar.
  const double bx = left + cell * static_cast<double>(cols) + 20, bh = cell * static_cast<double>(rows);
  for (int i = 0; i < 50; ++i) {
    const double t = 1.0 - i / 49.0;
    fig.add(Rect{bx, top + bh * i / 50.0, 14, bh / 50.0 + 0.5, heat_color(t)});
  }
  fig.add(Text{bx + 18, top + 8, num(vmax), 10});
  fig.add(Text{bx + 18, top + bh, "0", 10});
  return fig;
}

void draw_histogram_pair(Figure& fig, const HistogramPair& data, double x, double y, double w, double h) {
  const double plot_top = y + 18, plot_h = h - 36, plot_left = x + 28, plot_w = w - 36;
  fig.add(Text{x + w / 2, y + 12, data.title, 11, kBlack, Anchor::Middle});
  const int bins = std::max(1, data.max_value);
  auto counts = [&](const std::vector<int>& vals) {
    std::vector<double> c(static_cast<size_t>(bins), 0.0);
    for (int v : vals) c[static_cast<size_t>(std::clamp(v, 1, bins) - 1)] += 1.0;
    if (!vals.empty())
      for (double& v : c) v /= static_cast<double>(vals.size());
    return c;
  };
  auto a = counts(data.first), b = counts(data.second);
  double peak = 1e-9;
  for (size_t i = 0; i < a.size(); ++i) peak = std::max({peak, a[i], b[i]});
  fig.add(Line{plot_left, plot_top + plot_h, plot_left + plot_w, plot_top + plot_h, kBlack});
  fig.add(Line{plot_left, plot_top, plot_left, plot_top + plot_h, kBlack});
  const double bw = plot_w / bins;
  for (size_t i = 0; i < a.size(); ++i) {
    const double bx = plot_left + bw * static_cast<double>(i);
    if (a[i] > 0) {
      const double bh = plot_h * a[i] / peak;
      fig.add(Rect{bx, plot_top + plot_h - bh, std::max(bw, 1.0), bh, kBlue});
    }
  }
  // Second series drawn as an outline step so both remain visible.
  std::vector<std::pair<double, double>> step;
  for (size_t i = 0; i < b.size(); ++i) {
    const double bx = plot_left + bw * static_cast<double>(i);
    const double by = plot_top + plot_h - plot_h * b[i] / peak;
    if (i > 0) fig.add(Line{bx, step.back().second, bx, by, kOrange, 1.5});
    fig.add(Line{bx, by, bx + bw, by, kOrange, 1.5});
    step.emplace_back(bx + bw, by);
  }
  for (int tick : {1, bins / 2, bins}) {
    const double tx = plot_left + bw * (tick - 0.5);
    fig.add(Text{tx, plot_top + plot_h + 11, std::to_string(tick), 8, kBlack, Anchor::Middle});
  }
  fig.add(Rect{plot_left + plot_w - 70, plot_top, 8, 8, kBlue});
  fig.add(Text{plot_left + plot_w - 58, plot_top + 8, data.first_label, 8});
  fig.add(Rect{plot_left + plot_w - 70, plot_top + 12, 8, 8, kOrange});
  fig.add(Text{plot_left + plot_w - 58, plot_top + 20, data.second_label, 8});
}

Figure histogram_pair(const HistogramPair& data, int width, int height) {
  Figure fig(width, height);
  draw_histogram_pair(fig, data, 0, 0, width, height);
  return fig;
}

Figure scatter_grid(const std::vector<ScatterPanel>& panels, int columns, double max_axis) {
  const double size = 150, pad = 30;
  const int rows = static_cast<int>((panels.size() + static_cast<size_t>(columns) - 1) / static_cast<size_t>(columns));
  Figure fig(static_cast<int>(columns * (size + pad) + pad), static_cast<int>(rows * (size + pad) + pad));
  if (max_axis <= 0) max_axis = 1;
  for (size_t i = 0; i < panels.size(); ++i) {
    const double ox = pad + static_cast<double>(i % static_cast<size_t>(columns)) * (size + pad);
    const double oy = pad + static_cast<double>(i / static_cast<size_t>(columns)) * (size + pad);
    const auto& p = panels[i];
    fig.add(Rect{ox, oy, size, size, kWhite, kBlack});
    fig.add(Line{ox, oy + size, ox + size, oy, kGrid});
    fig.add(Text{ox + size / 2, oy - 6, p.title, 10, kBlack, Anchor::Middle});
    for (size_t k = 0; k < p.xs.size() && k < p.ys.size(); ++k) {
      const double x = ox + size * std::clamp(p.xs[k] / max_axis, 0.0, 1.0);
      const double y = oy + size * (1.0 - std::clamp(p.ys[k] / max_axis, 0.0, 1.0));
      fig.add(Circle{x, y, 1.5, kBlue});
    }
  }
  return fig;
}

Figure gallery(const std::vector<std::pair<std::string, std::vector<GlyphImage>>>& rows, int scale) {
  const double cell = kCanvas * scale + 4, left = 24;
  size_t cols = 1;
  for (const auto& [label, imgs] : rows) cols = std::max(cols, imgs.size());
  Figure fig(static_cast<int>(left + cell * static_cast<double>(cols) + 4),
             static_cast<int>(cell * static_cast<double>(rows.size()) + 4));
  for (size_t r = 0; r < rows.size(); ++r) {
    const double y = 4 + cell * static_cast<double>(r);
    fig.add(Text{4, y + cell / 2, rows[r].first, 12});
    for (size_t c = 0; c < rows[r].second.size(); ++c)
      fig.add(Glyph{left + cell * static_cast<double>(c), y, rows[r].second[c], scale});
  }
  return fig;
}

}  // namespace defletter::plot
